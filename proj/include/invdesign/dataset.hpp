#pragma once

// Synthetic (s1, s2, material, image) corpus: seeded generation, holdout
// split and line-delimited JSON serialization.
//
// File layout: line 1 is a header object, every following line one sample
//   {"id", "enc": {"presence": [5 x 0/1], "outer_len", "inner_len", "angle_deg"},
//    "epsilon_host", "s1": [n_points], "s2": [n_points], "image": [d strings of '0'/'1']}
// Reals are written in shortest round-trip form, so load(save(x)) == x.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "geometry.hpp"
#include "random.hpp"
#include "surrogate.hpp"

namespace invdesign {

inline constexpr int kDatasetFormatVersion = 1;

struct Sample {
    std::string id;
    Spectrum s1;  // horizontal polarization
    Spectrum s2;  // vertical polarization
    Material material;
    GeometryEncoding enc;
    BinaryImage image;
    bool operator==(const Sample&) const = default;
};

struct DatasetHeader {
    int format_version = kDatasetFormatVersion;
    RasterConfig raster;
    SpectrumGrid grid;
    SurrogateConstants surrogate;
    std::uint64_t seed = 0;
    bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
    DatasetHeader header;
    std::vector<Sample> samples;
    bool operator==(const Dataset&) const = default;
};

struct SamplingRanges {
    double outer_min = 0.3, outer_max = 0.48;
    double inner_min = 0.3, inner_max = 0.7;
    double angle_min = 0.0, angle_max = 90.0;
    double epsilon_min = kMinEpsilonHost, epsilon_max = kMaxEpsilonHost;
    bool operator==(const SamplingRanges&) const = default;
};

struct GenConfig {
    std::size_t n_samples = 4200;
    RasterConfig raster;
    SpectrumGrid grid;
    SurrogateConstants surrogate;
    SamplingRanges ranges;
    double l_family_weight = 0.75;  // relative mask weight of L shapes; others weigh 1
    std::uint64_t seed = 7;
};

inline void validate(const SamplingRanges& r) {
    auto check = [](double lo, double hi, const char* what) {
        if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo <= hi))
            throw ConfigError(std::string("empty sampling range for ") + what);
    };
    check(r.outer_min, r.outer_max, "outer_len");
    check(r.inner_min, r.inner_max, "inner_len");
    check(r.angle_min, r.angle_max, "angle_deg");
    check(r.epsilon_min, r.epsilon_max, "epsilon_host");
    if (r.outer_min <= 0.0 || r.outer_max > kMaxOuterLen) throw ConfigError("outer_len range must lie in (0, 0.5]");
    if (r.inner_min <= 0.0 || r.inner_max > kMaxInnerLen) throw ConfigError("inner_len range must lie in (0, 0.9]");
    if (r.angle_min < 0.0 || r.angle_max > 90.0) throw ConfigError("angle range must lie in [0, 90]");
    if (r.epsilon_min < kMinEpsilonHost || r.epsilon_max > kMaxEpsilonHost)
        throw ConfigError("epsilon_host range must lie in [1, 3]");
}

inline void validate(const GenConfig& cfg) {
    validate(cfg.raster);
    validate(cfg.grid);
    validate(cfg.ranges);
    if (!(cfg.l_family_weight >= 0.0) || !std::isfinite(cfg.l_family_weight))
        throw ConfigError("l_family_weight must be a non-negative number");
}

/// Presence masks the sampler draws from: every non-empty mask in which a
/// top edge implies the inner edge, in ascending bit order
/// (bit i = kAllEdges[i]).
inline std::vector<std::array<bool, 5>> template_masks() {
    std::vector<std::array<bool, 5>> out;
    for (int bits = 1; bits < 32; ++bits) {
        std::array<bool, 5> m{};
        for (int i = 0; i < 5; ++i) m[std::size_t(i)] = (bits >> i) & 1;
        const bool top = m[std::size_t(Edge::TopLeft)] || m[std::size_t(Edge::TopRight)];
        if (top && !m[std::size_t(Edge::Inner)]) continue;
        out.push_back(m);
    }
    return out;
}

inline std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06zu", index);
    return buf;
}

/// Builds one sample from its encoding and material (image and spectra are
/// always recomputed, never sampled).
inline Sample make_sample(std::string id, const GeometryEncoding& enc, const Material& mat, const RasterConfig& raster,
                          const SpectrumGrid& grid, const SurrogateConstants& c = {}) {
    auto [s1, s2] = simulate_spectra(enc, mat, grid, c);
    return {std::move(id), std::move(s1), std::move(s2), mat, enc, rasterize(enc, raster)};
}

/// Seeded corpus. Per sample the generator draws, in order: mask, outer_len,
/// inner_len, angle (only with a top-left edge, else 90), epsilon_host.
inline Dataset generate_dataset(const GenConfig& cfg) {
    validate(cfg);
    const auto masks = template_masks();
    std::vector<double> cumulative;
    double total = 0.0;
    for (const auto& m : masks) {
        GeometryEncoding probe;
        probe.edge_present = m;
        total += is_L_family(probe) ? cfg.l_family_weight : 1.0;
        cumulative.push_back(total);
    }
    if (!(total > 0.0)) throw ConfigError("all mask weights are zero");

    Dataset ds{{kDatasetFormatVersion, cfg.raster, cfg.grid, cfg.surrogate, cfg.seed}, {}};
    ds.samples.reserve(cfg.n_samples);
    Rng rng(cfg.seed);
    const auto& r = cfg.ranges;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        const double pick = uniform01(rng) * total;
        const std::size_t m = std::size_t(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
        GeometryEncoding enc;
        enc.edge_present = masks[std::min(m, masks.size() - 1)];
        enc.outer_len = uniform(rng, r.outer_min, r.outer_max);
        enc.inner_len = uniform(rng, r.inner_min, r.inner_max);
        enc.angle_deg = enc.has(Edge::TopLeft) ? uniform(rng, r.angle_min, r.angle_max) : 90.0;
        const Material mat{Metal::Gold, uniform(rng, r.epsilon_min, r.epsilon_max)};
        ds.samples.push_back(make_sample(sample_id(i), enc, mat, cfg.raster, cfg.grid, cfg.surrogate));
    }
    return ds;
}

struct SplitMeta {
    std::string predicate = "l_family";
    double validation_fraction = 0.05;
    std::uint64_t seed = 0;
    bool operator==(const SplitMeta&) const = default;
};

struct DatasetSplit {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::vector<Sample> test;
    SplitMeta meta;
};

/// test = samples matching the holdout predicate; validation = a seeded
/// round(fraction * rest) (at least 1) of the rest; train = remainder.
/// All three keep corpus order.
inline DatasetSplit split_dataset(const std::vector<Sample>& samples, double validation_fraction, std::uint64_t seed,
                                  const std::string& predicate = "l_family") {
    if (!(validation_fraction > 0.0 && validation_fraction < 0.5))
        throw ConfigError("validation fraction must lie in (0, 0.5)");
    const auto in_test = holdout_predicate(predicate);

    DatasetSplit split;
    split.meta = {predicate, validation_fraction, seed};
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (in_test(samples[i].enc))
            split.test.push_back(samples[i]);
        else
            rest.push_back(i);
    }
    if (split.test.empty()) throw EmptyTestSet("no sample matches the holdout predicate '" + predicate + "'");
    if (rest.size() < 2) throw EmptyTrainSet("fewer than two samples remain for train and validation");

    std::size_t n_val = std::size_t(std::llround(validation_fraction * double(rest.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, rest.size() - 1);

    // Partial Fisher-Yates over positions in `rest`.
    std::vector<std::size_t> order(rest.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < n_val; ++i) {
        const std::size_t j = i + std::size_t(uniform_index(rng, order.size() - i));
        std::swap(order[i], order[j]);
    }
    std::vector<bool> is_val(rest.size(), false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
    for (std::size_t k = 0; k < rest.size(); ++k)
        (is_val[k] ? split.validation : split.train).push_back(samples[rest[k]]);
    return split;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json header_json(const DatasetHeader& h) {
    ordered_json j;
    j["format_version"] = h.format_version;
    j["d"] = h.raster.d;
    j["stroke_w"] = h.raster.stroke_w;
    j["n_points"] = h.grid.n_points;
    j["lambda_min"] = h.grid.lambda_min;
    j["lambda_max"] = h.grid.lambda_max;
    j["seed"] = h.seed;
    j["surrogate"] = {{"k", h.surrogate.k},
                      {"linewidth_nm", h.surrogate.linewidth_nm},
                      {"depth", h.surrogate.depth},
                      {"canvas_nm", h.surrogate.canvas_nm}};
    return j;
}

inline std::vector<std::string> image_rows(const BinaryImage& img) {
    std::vector<std::string> rows;
    const int d = img.size();
    for (int r = 0; r < d; ++r) {
        std::string row(std::size_t(d), '0');
        for (int c = 0; c < d; ++c)
            if (img(r, c)) row[std::size_t(c)] = '1';
        rows.push_back(std::move(row));
    }
    return rows;
}

inline ordered_json sample_json(const Sample& s) {
    ordered_json enc;
    std::vector<int> presence;
    for (bool b : s.enc.edge_present) presence.push_back(b ? 1 : 0);
    enc["presence"] = presence;
    enc["outer_len"] = s.enc.outer_len;
    enc["inner_len"] = s.enc.inner_len;
    enc["angle_deg"] = s.enc.angle_deg;
    ordered_json j;
    j["id"] = s.id;
    j["enc"] = std::move(enc);
    j["epsilon_host"] = s.material.epsilon_host;
    j["s1"] = s.s1.values;
    j["s2"] = s.s2.values;
    j["image"] = image_rows(s.image);
    return j;
}

// Field accessors that turn type/presence problems into FormatError.
struct RecordReader {
    const nlohmann::json& j;
    std::size_t line;
    std::string id;

    [[noreturn]] void fail(const std::string& what) const { throw FormatError(what, line, id); }

    const nlohmann::json& at(const nlohmann::json& obj, const char* key) const {
        if (!obj.is_object()) fail("expected an object");
        auto it = obj.find(key);
        if (it == obj.end()) fail(std::string("missing field '") + key + "'");
        return *it;
    }
    double number(const nlohmann::json& obj, const char* key) const {
        const auto& v = at(obj, key);
        if (!v.is_number()) fail(std::string("field '") + key + "' must be a number");
        return v.get<double>();
    }
    std::int64_t integer(const nlohmann::json& obj, const char* key) const {
        const auto& v = at(obj, key);
        if (!v.is_number_integer()) fail(std::string("field '") + key + "' must be an integer");
        return v.get<std::int64_t>();
    }
    std::vector<double> reals(const nlohmann::json& obj, const char* key, std::size_t n) const {
        const auto& v = at(obj, key);
        if (!v.is_array()) fail(std::string("field '") + key + "' must be an array");
        if (v.size() != n)
            fail(std::string("field '") + key + "' has " + std::to_string(v.size()) + " values, expected " +
                 std::to_string(n));
        std::vector<double> out;
        out.reserve(n);
        for (const auto& e : v) {
            if (!e.is_number()) fail(std::string("field '") + key + "' must hold numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }
};

inline nlohmann::json parse_line(const std::string& text, std::size_t line) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("invalid JSON: ") + e.what(), line);
    }
}

inline DatasetHeader parse_header(const nlohmann::json& j, std::size_t line) {
    RecordReader rd{j, line, {}};
    DatasetHeader h;
    h.format_version = int(rd.integer(j, "format_version"));
    if (h.format_version != kDatasetFormatVersion)
        rd.fail("unsupported format_version " + std::to_string(h.format_version));
    h.raster.d = int(rd.integer(j, "d"));
    h.raster.stroke_w = int(rd.integer(j, "stroke_w"));
    h.grid.n_points = int(rd.integer(j, "n_points"));
    h.grid.lambda_min = rd.number(j, "lambda_min");
    h.grid.lambda_max = rd.number(j, "lambda_max");
    const auto& seed = rd.at(j, "seed");
    if (!seed.is_number_unsigned()) rd.fail("field 'seed' must be a non-negative integer");
    h.seed = seed.get<std::uint64_t>();
    if (j.contains("surrogate")) {
        const auto& s = j["surrogate"];
        h.surrogate = {rd.number(s, "k"), rd.number(s, "linewidth_nm"), rd.number(s, "depth"), rd.number(s, "canvas_nm")};
    }
    try {
        validate(h.raster);
        validate(h.grid);
    } catch (const Error& e) {
        rd.fail(e.what());
    }
    return h;
}

inline std::string record_id(const nlohmann::json& j) {
    if (j.is_object()) {
        auto it = j.find("id");
        if (it != j.end() && it->is_string()) return it->get<std::string>();
    }
    return {};
}

inline Sample parse_sample(const nlohmann::json& j, std::size_t line, const DatasetHeader& h) {
    RecordReader rd{j, line, record_id(j)};
    if (rd.id.empty()) rd.fail("missing string field 'id'");
    Sample s;
    s.id = rd.id;

    const auto& enc = rd.at(j, "enc");
    const auto& presence = rd.at(enc, "presence");
    if (!presence.is_array() || presence.size() != 5) rd.fail("'presence' must hold 5 entries");
    for (std::size_t i = 0; i < 5; ++i) {
        if (!presence[i].is_number_integer() || (presence[i] != 0 && presence[i] != 1))
            rd.fail("'presence' entries must be 0 or 1");
        s.enc.edge_present[i] = presence[i] == 1;
    }
    s.enc.outer_len = rd.number(enc, "outer_len");
    s.enc.inner_len = rd.number(enc, "inner_len");
    s.enc.angle_deg = rd.number(enc, "angle_deg");
    s.material = {Metal::Gold, rd.number(j, "epsilon_host")};
    try {
        validate(s.enc);
        validate(s.material);
    } catch (const Error& e) {
        rd.fail(e.what());
    }

    const std::size_t n = std::size_t(h.grid.n_points);
    s.s1 = {h.grid, rd.reals(j, "s1", n)};
    s.s2 = {h.grid, rd.reals(j, "s2", n)};

    const auto& rows = rd.at(j, "image");
    const int d = h.raster.d;
    if (!rows.is_array() || rows.size() != std::size_t(d))
        rd.fail("'image' must hold " + std::to_string(d) + " rows");
    s.image = BinaryImage(d);
    for (int r = 0; r < d; ++r) {
        if (!rows[std::size_t(r)].is_string()) rd.fail("image rows must be strings");
        const auto& row = rows[std::size_t(r)].get_ref<const std::string&>();
        if (row.size() != std::size_t(d))
            rd.fail("image row " + std::to_string(r) + " has " + std::to_string(row.size()) + " pixels, expected " +
                    std::to_string(d));
        for (int c = 0; c < d; ++c) {
            const char ch = row[std::size_t(c)];
            if (ch != '0' && ch != '1') rd.fail("image pixels must be '0' or '1'");
            s.image.set(r, c, ch == '1');
        }
    }
    return s;
}

}  // namespace detail

/// Writes the whole file to `path` via a sibling temporary and a rename.
inline void write_file_atomically(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), std::streamsize(content.size()));
        if (!out) throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string serialize_dataset(const Dataset& ds) {
    std::string out = detail::header_json(ds.header).dump() + "\n";
    for (const auto& s : ds.samples) out += detail::sample_json(s).dump() + "\n";
    return out;
}

inline Dataset parse_dataset(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    Dataset ds;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto j = detail::parse_line(line, lineno);
        if (!have_header) {
            ds.header = detail::parse_header(j, lineno);
            have_header = true;
            continue;
        }
        ds.samples.push_back(detail::parse_sample(j, lineno, ds.header));
    }
    if (!have_header) throw FormatError("missing header record", lineno);
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    write_file_atomically(path, serialize_dataset(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) { return parse_dataset(read_file(path)); }

/// Network input read from a spectra file: any line-delimited file of
/// records with at least "s1", "s2" and "epsilon_host" (a dataset file
/// qualifies; its header line is skipped).
struct SpectraQuery {
    std::string id;
    std::vector<double> s1, s2;
    double epsilon_host = 1.0;
};

inline std::vector<SpectraQuery> parse_spectra_queries(const std::string& text, std::size_t n_points) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<SpectraQuery> out;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto j = detail::parse_line(line, lineno);
        if (j.is_object() && j.contains("format_version")) continue;
        detail::RecordReader rd{j, lineno, detail::record_id(j)};
        SpectraQuery q;
        q.id = rd.id.empty() ? "query" + std::to_string(out.size()) : rd.id;
        q.s1 = rd.reals(j, "s1", n_points);
        q.s2 = rd.reals(j, "s2", n_points);
        q.epsilon_host = rd.number(j, "epsilon_host");
        try {
            validate(Material{Metal::Gold, q.epsilon_host});
        } catch (const Error& e) {
            rd.fail(e.what());
        }
        out.push_back(std::move(q));
    }
    if (out.empty()) throw FormatError("no spectra records found", lineno);
    return out;
}

}  // namespace invdesign
