#include "geoformer/data_synth.hpp"

#include "geoformer/tensor_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace geoformer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kBackgroundLevel = 0.5;
constexpr double kBackgroundNoise = 0.2;

// Stream labels for seed derivation.
enum : uint64_t { kStreamStation = 101, kStreamSeries = 102, kStreamRaster = 103, kStreamSplit = 104 };

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

} // namespace

void Station::validate() const {
    if (!(ar_coeff > 0.0 && ar_coeff < 1.0))
        throw std::invalid_argument("station " + id + ": AR coefficient " +
                                    std::to_string(ar_coeff) + " outside (0, 1)");
    if (!(base > 0.0))
        throw std::invalid_argument("station " + id + ": base level must be positive");
}

Station make_station(size_t index, uint64_t seed) {
    SplitMix64 rng(derive_seed(seed, {kStreamStation, index}));
    Station s;
    std::ostringstream id;
    id << "st" << std::setw(3) << std::setfill('0') << index;
    s.id = id.str();
    s.lat = rng.uniform(35.0, 60.0);
    s.lon = rng.uniform(-10.0, 25.0);
    s.base = rng.uniform(8.0, 40.0);
    s.seasonal_amp = rng.uniform(2.0, 10.0);
    s.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.ar_coeff = rng.uniform(0.6, 0.9);
    s.ar_noise_sd = rng.uniform(1.0, 3.0);
    s.obs_noise_sd = rng.uniform(0.3, 1.0);
    s.plume_width = rng.uniform(8.0, 20.0);
    s.plume_dx = rng.uniform(-8.0, 8.0);
    s.plume_dy = rng.uniform(-8.0, 8.0);
    // One instrument, one response: the reflectance-per-concentration gain
    // is a property of the (synthetic) sensor, not of the station.
    s.plume_gain = 0.05;
    s.validate();
    return s;
}

No2Series generate_station_series(const Station& station, size_t n_days, uint64_t seed) {
    station.validate();
    if (n_days == 0) throw std::invalid_argument("generate_station_series: n_days must be >= 1");
    SplitMix64 rng(derive_seed(seed, {kStreamSeries, fnv1a64(station.id.c_str())}));
    No2Series series;
    series.values.reserve(n_days);
    series.timestamps.reserve(n_days);
    double residual = 0.0;
    for (size_t t = 0; t < n_days; ++t) {
        residual = station.ar_coeff * residual + station.ar_noise_sd * rng.normal();
        const double seasonal =
            station.seasonal_amp *
            std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 365.0 + station.phase);
        const double value =
            station.base + seasonal + residual + station.obs_noise_sd * rng.normal();
        series.values.push_back(std::max(0.0, value));
        series.timestamps.push_back(static_cast<long>(t));
    }
    return series;
}

Tensor render_raster(const Station& station, size_t day, double concentration, uint64_t seed) {
    if (!(concentration >= 0.0))
        throw std::invalid_argument("render_raster: negative concentration");
    SplitMix64 rng(derive_seed(seed, {kStreamRaster, fnv1a64(station.id.c_str()), day}));
    const size_t s = kRasterSize;
    const double cx = static_cast<double>(s) / 2.0 + station.plume_dx;
    const double cy = static_cast<double>(s) / 2.0 + station.plume_dy;
    const double inv_two_w2 = 1.0 / (2.0 * station.plume_width * station.plume_width);
    const double amp = station.plume_gain * concentration;
    Tensor raster = Tensor::zeros({s, s, 1});
    for (size_t y = 0; y < s; ++y)
        for (size_t x = 0; x < s; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double plume = amp * std::exp(-(dx * dx + dy * dy) * inv_two_w2);
            raster[y * s + x] = plume + kBackgroundLevel + kBackgroundNoise * rng.uniform();
        }
    return raster;
}

Tensor rolling_mosaic(const std::vector<Tensor>& rasters) {
    if (rasters.empty()) throw std::invalid_argument("rolling_mosaic: empty window");
    const auto& shape = rasters[0].shape();
    for (const Tensor& r : rasters)
        if (r.shape() != shape)
            throw std::invalid_argument("rolling_mosaic: shape mismatch (" +
                                        shape_str(r.shape()) + " vs " + shape_str(shape) + ")");
    Tensor out = Tensor::zeros(shape);
    const double inv = 1.0 / static_cast<double>(rasters.size());
    for (const Tensor& r : rasters)
        for (size_t i = 0; i < out.numel(); ++i) out[i] += r[i];
    for (size_t i = 0; i < out.numel(); ++i) out[i] *= inv;
    return out;
}

Tensor bilinear_resize(const Tensor& image, size_t out) {
    if (image.rank() != 3 || image.shape()[2] != 1 || image.shape()[0] != image.shape()[1])
        throw std::invalid_argument("bilinear_resize: expected square [S, S, 1] image, got " +
                                    shape_str(image.shape()));
    const size_t in = image.shape()[0];
    if (out < 2 || in < 2) throw std::invalid_argument("bilinear_resize: sizes must be >= 2");
    Tensor res = Tensor::zeros({out, out, 1});
    const double step = static_cast<double>(in - 1) / static_cast<double>(out - 1);
    for (size_t oy = 0; oy < out; ++oy) {
        const double sy = static_cast<double>(oy) * step;
        const size_t y0 = std::min(static_cast<size_t>(sy), in - 2);
        const double fy = sy - static_cast<double>(y0);
        for (size_t ox = 0; ox < out; ++ox) {
            const double sx = static_cast<double>(ox) * step;
            const size_t x0 = std::min(static_cast<size_t>(sx), in - 2);
            const double fx = sx - static_cast<double>(x0);
            const double a = image[y0 * in + x0];
            const double b = image[y0 * in + x0 + 1];
            const double c = image[(y0 + 1) * in + x0];
            const double d = image[(y0 + 1) * in + x0 + 1];
            const double top = a + fx * (b - a);
            const double bottom = c + fx * (d - c);
            res[oy * out + ox] = top + fy * (bottom - top);
        }
    }
    return res;
}

Tensor crop_resize(const Tensor& raster, size_t out) {
    if (raster.rank() != 3 || raster.shape()[0] != kRasterSize ||
        raster.shape()[1] != kRasterSize || raster.shape()[2] != 1)
        throw std::invalid_argument("crop_resize: expected 128x128x1 raster, got " +
                                    shape_str(raster.shape()));
    const size_t margin = (kRasterSize - kCropSize) / 2;
    Tensor crop = Tensor::zeros({kCropSize, kCropSize, 1});
    for (size_t y = 0; y < kCropSize; ++y)
        for (size_t x = 0; x < kCropSize; ++x)
            crop[y * kCropSize + x] = raster[(y + margin) * kRasterSize + (x + margin)];
    return bilinear_resize(crop, out);
}

Tensor sample_image(const Station& station, const No2Series& series, size_t day, uint64_t seed) {
    if (day < kMosaicWindow || day > series.length())
        throw std::invalid_argument("sample_image: day " + std::to_string(day) +
                                    " lacks a full mosaic window");
    std::vector<Tensor> window;
    window.reserve(kMosaicWindow);
    for (size_t d = day - kMosaicWindow; d < day; ++d)
        window.push_back(render_raster(station, d, series.values[d], seed));
    return crop_resize(rolling_mosaic(window));
}

std::string DatasetManifest::to_json() const {
    json j;
    j["version"] = version;
    j["seed"] = seed;
    j["n_days"] = n_days;
    j["history_len"] = history_len;
    j["generator"] = {{"mosaic", "mean"},
                      {"mosaic_window", kMosaicWindow},
                      {"crop", "center-" + std::to_string(kCropSize)},
                      {"resize", "bilinear-" + std::to_string(kImageSize)}};
    json st = json::array();
    for (const StationEntry& s : stations)
        st.push_back({{"id", s.id}, {"lat", s.lat}, {"lon", s.lon}, {"split", s.split}});
    j["stations"] = st;
    j["stats"] = {{"pixel_mean", stats.pixel_mean},
                  {"pixel_std", stats.pixel_std},
                  {"conc_mean", stats.conc_mean},
                  {"conc_std", stats.conc_std}};
    json sm = json::array();
    for (const SampleEntry& s : samples)
        sm.push_back({{"station", s.station},
                      {"day", s.day},
                      {"image_path", s.image_path},
                      {"history_path", s.history_path},
                      {"target", format_double(s.target)}});
    j["samples"] = sm;
    return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    const json j = json::parse(text);
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    m.n_days = j.at("n_days").get<size_t>();
    m.history_len = j.at("history_len").get<size_t>();
    for (const json& s : j.at("stations"))
        m.stations.push_back({s.at("id").get<std::string>(), s.at("lat").get<double>(),
                              s.at("lon").get<double>(), s.at("split").get<std::string>()});
    const json& st = j.at("stats");
    m.stats.pixel_mean = st.at("pixel_mean").get<double>();
    m.stats.pixel_std = st.at("pixel_std").get<double>();
    m.stats.conc_mean = st.at("conc_mean").get<double>();
    m.stats.conc_std = st.at("conc_std").get<double>();
    for (const json& s : j.at("samples")) {
        SampleEntry e;
        e.station = s.at("station").get<std::string>();
        e.day = s.at("day").get<size_t>();
        e.image_path = s.at("image_path").get<std::string>();
        e.history_path = s.at("history_path").get<std::string>();
        e.target = std::stod(s.at("target").get<std::string>());
        m.samples.push_back(std::move(e));
    }
    return m;
}

DatasetManifest build_dataset(size_t n_stations, size_t n_days, size_t history_len, uint64_t seed,
                              const std::string& out_dir) {
    if (n_stations == 0) throw std::invalid_argument("build_dataset: need at least one station");
    if (history_len == 0) throw std::invalid_argument("build_dataset: history_len must be >= 1");
    if (n_days < history_len + kMosaicWindow)
        throw std::invalid_argument("build_dataset: n_days " + std::to_string(n_days) +
                                    " < history_len + mosaic window (" +
                                    std::to_string(history_len + kMosaicWindow) + ")");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("build_dataset: cannot create " + out_dir + ": " + ec.message());

    // Station roster and held-out split.
    std::vector<Station> stations;
    for (size_t i = 0; i < n_stations; ++i) stations.push_back(make_station(i, seed));
    std::vector<size_t> order(n_stations);
    for (size_t i = 0; i < n_stations; ++i) order[i] = i;
    SplitMix64 split_rng(derive_seed(seed, {kStreamSplit}));
    split_rng.shuffle(order);
    const size_t n_test = std::max<size_t>(1, (n_stations + 2) / 5);
    std::vector<bool> is_test(n_stations, false);
    for (size_t i = 0; i < n_test && i < n_stations; ++i) is_test[order[i]] = true;

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.n_days = n_days;
    manifest.history_len = history_len;
    for (size_t i = 0; i < n_stations; ++i)
        manifest.stations.push_back({stations[i].id, stations[i].lat, stations[i].lon,
                                     is_test[i] ? "test" : "train"});

    // Generate every sample's raw image once, keeping pixels in memory so
    // train stats can be computed before anything is normalized and written.
    struct PendingSample {
        size_t station_index;
        size_t day;
        std::vector<double> raw_pixels;
    };
    std::vector<PendingSample> pending;
    std::vector<No2Series> all_series;
    const size_t first_day = std::max(history_len, kMosaicWindow);
    for (size_t si = 0; si < n_stations; ++si) {
        const Station& st = stations[si];
        No2Series series = generate_station_series(st, n_days, seed);
        std::deque<Tensor> window;
        for (size_t d = first_day - kMosaicWindow; d < first_day; ++d)
            window.push_back(render_raster(st, d, series.values[d], seed));
        for (size_t t = first_day; t < n_days; ++t) {
            Tensor image = crop_resize(
                rolling_mosaic(std::vector<Tensor>(window.begin(), window.end())));
            PendingSample ps;
            ps.station_index = si;
            ps.day = t;
            ps.raw_pixels = image.data();
            pending.push_back(std::move(ps));
            window.pop_front();
            window.push_back(render_raster(st, t, series.values[t], seed));
        }
        all_series.push_back(std::move(series));
    }

    // Train-only normalization stats (population std).
    double px_sum = 0.0, px_sq = 0.0, cn_sum = 0.0, cn_sq = 0.0;
    size_t px_n = 0, cn_n = 0;
    for (const PendingSample& ps : pending) {
        if (is_test[ps.station_index]) continue;
        for (double v : ps.raw_pixels) {
            px_sum += v;
            px_sq += v * v;
        }
        px_n += ps.raw_pixels.size();
        const double target = all_series[ps.station_index].values[ps.day];
        cn_sum += target;
        cn_sq += target * target;
        cn_n += 1;
    }
    if (px_n == 0) throw std::invalid_argument("build_dataset: train split is empty");
    NormStats stats;
    stats.pixel_mean = px_sum / static_cast<double>(px_n);
    stats.pixel_std =
        std::sqrt(std::max(0.0, px_sq / static_cast<double>(px_n) - stats.pixel_mean * stats.pixel_mean));
    stats.conc_mean = cn_sum / static_cast<double>(cn_n);
    stats.conc_std =
        std::sqrt(std::max(0.0, cn_sq / static_cast<double>(cn_n) - stats.conc_mean * stats.conc_mean));
    if (stats.pixel_std <= 0.0 || stats.conc_std <= 0.0)
        throw std::invalid_argument("build_dataset: degenerate train statistics");
    manifest.stats = stats;

    // Normalize and write.
    for (const PendingSample& ps : pending) {
        const Station& st = stations[ps.station_index];
        const No2Series& series = all_series[ps.station_index];
        const fs::path st_dir = fs::path(out_dir) / "samples" / st.id;
        fs::create_directories(st_dir, ec);
        if (ec) throw IoError("build_dataset: cannot create " + st_dir.string());

        std::ostringstream day_tag;
        day_tag << std::setw(4) << std::setfill('0') << ps.day;
        const std::string img_rel = "samples/" + st.id + "/" + day_tag.str() + ".img.gft1";
        const std::string hist_rel = "samples/" + st.id + "/" + day_tag.str() + ".hist.gft1";

        Tensor image = Tensor::zeros({kImageSize, kImageSize, 1});
        for (size_t i = 0; i < image.numel(); ++i)
            image[i] = (ps.raw_pixels[i] - stats.pixel_mean) / stats.pixel_std;
        save_gft1(image, (fs::path(out_dir) / img_rel).string());

        Tensor history = Tensor::zeros({history_len});
        for (size_t i = 0; i < history_len; ++i)
            history[i] = series.values[ps.day - history_len + i];
        save_gft1(history, (fs::path(out_dir) / hist_rel).string());

        manifest.samples.push_back(
            {st.id, ps.day, img_rel, hist_rel, series.values[ps.day]});
    }

    std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("build_dataset: cannot write manifest in " + out_dir);
    mf << manifest.to_json();
    if (!mf) throw IoError("build_dataset: short manifest write in " + out_dir);
    return manifest;
}

Dataset Dataset::open(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("dataset: cannot open manifest in " + dir);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Dataset ds;
    ds.manifest_ = DatasetManifest::from_json(text);
    ds.root_ = dir;
    return ds;
}

Sample Dataset::load(size_t index) const {
    if (index >= manifest_.samples.size())
        throw std::invalid_argument("dataset: sample index " + std::to_string(index) +
                                    " out of " + std::to_string(manifest_.samples.size()));
    const SampleEntry& e = manifest_.samples[index];
    Sample s;
    s.station = e.station;
    s.day = e.day;
    s.target = e.target;
    s.image = load_gft1((fs::path(root_) / e.image_path).string());
    Tensor hist = load_gft1((fs::path(root_) / e.history_path).string());
    s.history.values.assign(hist.data().begin(), hist.data().end());
    for (size_t i = 0; i < hist.numel(); ++i)
        s.history.timestamps.push_back(static_cast<long>(e.day - hist.numel() + i));
    return s;
}

std::vector<size_t> Dataset::split_indices(const std::string& split) const {
    if (split != "train" && split != "test")
        throw std::invalid_argument("dataset: unknown split '" + split + "'");
    std::vector<size_t> out;
    for (size_t i = 0; i < manifest_.samples.size(); ++i)
        if (station(manifest_.samples[i].station).split == split) out.push_back(i);
    return out;
}

const StationEntry& Dataset::station(const std::string& id) const {
    for (const StationEntry& s : manifest_.stations)
        if (s.id == id) return s;
    throw std::invalid_argument("dataset: unknown station " + id);
}

} // namespace geoformer
