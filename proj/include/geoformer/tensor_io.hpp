#pragma once

#include "geoformer/tensor.hpp"

#include <stdexcept>
#include <string>

namespace geoformer {

/// Filesystem / stream failure; the CLI maps this family to exit code 2.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// GFT1 container: magic "GFT1", u32 LE rank, one u32 LE extent per axis,
/// then the row-major payload as f32 LE (values are rounded from f64 on
/// save and widened back on load).
void save_gft1(const Tensor& t, const std::string& path);
Tensor load_gft1(const std::string& path);

/// Header + payload byte count for a tensor of this shape.
size_t gft1_size_bytes(const std::vector<size_t>& shape);

} // namespace geoformer
