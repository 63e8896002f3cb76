#pragma once

#include "geoformer/rng.hpp"
#include "geoformer/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

namespace test_util {

using geoformer::SplitMix64;
using geoformer::Tensor;

inline Tensor random_tensor(std::vector<size_t> shape, SplitMix64& rng, double lo = -2.0,
                            double hi = 2.0, bool requires_grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Two-loop reference attention, independent of the library path.
inline Tensor naive_dense_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const size_t lq = q.extent(0), lk = k.extent(0), d = q.extent(1), dv = v.extent(1);
    Tensor out = Tensor::zeros({lq, dv});
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (size_t i = 0; i < lq; ++i) {
        std::vector<double> scores(lk);
        double mx = -1e300;
        for (size_t j = 0; j < lk; ++j) {
            double dot = 0.0;
            for (size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
            scores[j] = dot * inv_sqrt_d;
            mx = std::max(mx, scores[j]);
        }
        double denom = 0.0;
        for (size_t j = 0; j < lk; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            denom += scores[j];
        }
        for (size_t j = 0; j < lk; ++j)
            for (size_t c = 0; c < dv; ++c) out[i * dv + c] += (scores[j] / denom) * v[j * dv + c];
    }
    return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
    return worst;
}

// Scratch directory under the test's working dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::absolute("tmp_" + tag + "_" +
                                          std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string str() const { return path_.string(); }
    std::filesystem::path path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Recursive byte comparison of two directory trees.
inline bool directories_identical(const std::string& a, const std::string& b) {
    namespace fs = std::filesystem;
    std::vector<std::string> rel_a, rel_b;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a).string());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b).string());
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const std::string& rel : rel_a) {
        if (read_file_bytes((fs::path(a) / rel).string()) !=
            read_file_bytes((fs::path(b) / rel).string()))
            return false;
    }
    return true;
}

struct CommandResult {
    int exit_code = -1;
    std::string output; // stdout only
};

// Runs a shell command, captures stdout; stderr goes to the test log.
inline CommandResult run_command(const std::string& cmd) {
    CommandResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf;
    size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

} // namespace test_util
