#pragma once

namespace geoformer {

/// Train-split normalization statistics; computed once at dataset build time
/// and carried verbatim into checkpoints (never recomputed at inference).
struct NormStats {
    double pixel_mean = 0.0;
    double pixel_std = 1.0;
    double conc_mean = 0.0;
    double conc_std = 1.0;
};

} // namespace geoformer
