#pragma once

#include "geoformer/encoder.hpp"
#include "geoformer/norm_stats.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace geoformer {

/// Synthetic monitoring station: location plus the latent emission process
/// parameters that drive its series and plume rendering.
struct Station {
    std::string id;
    double lat = 0.0, lon = 0.0;
    double base = 20.0;         // mean concentration, ug/m3
    double seasonal_amp = 5.0;  // annual cycle amplitude
    double phase = 0.0;
    double ar_coeff = 0.8;      // in (0, 1)
    double ar_noise_sd = 2.0;
    double obs_noise_sd = 0.5;
    double plume_width = 12.0;  // Gaussian sigma, pixels
    double plume_dx = 0.0, plume_dy = 0.0; // offset from raster center
    double plume_gain = 0.05;   // peak reflectance per ug/m3

    void validate() const;
};

inline constexpr size_t kRasterSize = 128;
inline constexpr size_t kCropSize = 96;
inline constexpr size_t kImageSize = 64;
inline constexpr size_t kMosaicWindow = 10;

Station make_station(size_t index, uint64_t seed);

/// base + seasonal sine + AR(1) residual + observation noise, clipped at 0.
/// Deterministic per (station, seed); timestamps are 0..n_days-1.
No2Series generate_station_series(const Station& station, size_t n_days, uint64_t seed);

/// 128x128x1 scene: Gaussian plume near the station center with peak
/// amplitude proportional to that day's concentration, over a noisy
/// background. Deterministic per (station, day, concentration, seed).
Tensor render_raster(const Station& station, size_t day, double concentration, uint64_t seed);

/// Per-pixel mean over the window (cloud-robust compositing stand-in).
Tensor rolling_mosaic(const std::vector<Tensor>& rasters);

/// Bilinear resample of an [S, S, 1] image to [out, out, 1]; endpoints map
/// to endpoints.
Tensor bilinear_resize(const Tensor& image, size_t out);

/// Center crop to the fixed 96x96 bounding-box stand-in, then bilinear
/// resize. Input must be 128x128x1.
Tensor crop_resize(const Tensor& raster, size_t out = kImageSize);

/// The raw (unnormalized) model input for day t: mosaic over [t-10, t-1],
/// cropped and resized. Exactly the pixels build_dataset writes, pre
/// normalization.
Tensor sample_image(const Station& station, const No2Series& series, size_t day, uint64_t seed);

struct StationEntry {
    std::string id;
    double lat = 0.0, lon = 0.0;
    std::string split; // "train" | "test"
};

struct SampleEntry {
    std::string station;
    size_t day = 0;
    std::string image_path;
    std::string history_path;
    double target = 0.0; // ug/m3
};

struct DatasetManifest {
    int version = 1;
    uint64_t seed = 0;
    size_t n_days = 0;
    size_t history_len = 0;
    std::vector<StationEntry> stations;
    NormStats stats;
    std::vector<SampleEntry> samples;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
};

/// Generates all stations, assembles one sample per (station, day >=
/// max(L, 10)), splits stations 80/20 by seeded shuffle, computes train-only
/// normalization stats, and writes manifest + GFT1 files under out_dir.
DatasetManifest build_dataset(size_t n_stations, size_t n_days, size_t history_len, uint64_t seed,
                              const std::string& out_dir);

/// One loaded sample: normalized image, physical history ending at day-1.
struct Sample {
    std::string station;
    size_t day = 0;
    Tensor image;      // [64, 64, 1], normalized
    No2Series history; // physical ug/m3, timestamps day-L .. day-1
    double target = 0.0;
};

class Dataset {
public:
    static Dataset open(const std::string& dir);

    const DatasetManifest& manifest() const { return manifest_; }
    const std::string& root() const { return root_; }
    size_t size() const { return manifest_.samples.size(); }
    Sample load(size_t index) const;
    std::vector<size_t> split_indices(const std::string& split) const;
    const StationEntry& station(const std::string& id) const;

private:
    DatasetManifest manifest_;
    std::string root_;
};

} // namespace geoformer
