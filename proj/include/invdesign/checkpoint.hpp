#pragma once

// Binary checkpoint:
//   bytes 0..7   "INVDCKPT"
//   bytes 8..15  header length N, uint64 little-endian
//   next N bytes JSON header {format_version, arch, adam: {t, lr, beta1, beta2, eps}, step, shapes}
//   then float64 little-endian: all parameter arrays, then all first moments,
//   then all second moments, each group in ModelParams::tensors() order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "dataset.hpp"
#include "errors.hpp"
#include "nn.hpp"

namespace invdesign {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "INVDCKPT";

struct Checkpoint {
    ModelParams params;
    AdamState adam;
    std::int64_t step = 0;
    bool operator==(const Checkpoint&) const = default;
};

inline Checkpoint make_checkpoint(const ModelParams& p, const AdamConfig& adam = {}) {
    return {p, make_adam_state(p.arch, adam), 0};
}

inline nlohmann::ordered_json arch_json(const ArchConfig& a) {
    nlohmann::ordered_json j;
    j["branch_widths"] = a.branch_widths;
    j["d"] = a.d;
    j["n_points"] = a.n_points;
    j["channels"] = a.channels;
    j["kernel"] = a.kernel;
    j["linear_head"] = a.linear_head;
    return j;
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
    ArchConfig a;
    try {
        a.branch_widths = j.at("branch_widths").get<std::vector<int>>();
        a.d = j.at("d").get<int>();
        a.n_points = j.at("n_points").get<int>();
        a.channels = j.at("channels").get<int>();
        a.kernel = j.at("kernel").get<int>();
        a.linear_head = j.at("linear_head").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad arch record: ") + e.what());
    }
    try {
        validate(a);
    } catch (const ConfigError& e) {
        throw FormatError(e.what());
    }
    return a;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
}

inline void put_reals(std::string& out, std::span<const double> xs) {
    for (double x : xs) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    check_same_shapes(ck.params, ck.adam.m);
    check_same_shapes(ck.params, ck.adam.v);
    nlohmann::ordered_json h;
    h["format_version"] = kCheckpointFormatVersion;
    h["arch"] = arch_json(ck.params.arch);
    h["adam"] = {{"t", ck.adam.t},
                 {"lr", ck.adam.lr},
                 {"beta1", ck.adam.beta1},
                 {"beta2", ck.adam.beta2},
                 {"eps", ck.adam.eps}};
    h["step"] = ck.step;
    nlohmann::ordered_json shapes = nlohmann::ordered_json::array();
    for (const Tensor* t : ck.params.tensors()) shapes.push_back(t->shape);
    h["shapes"] = shapes;
    const std::string header = h.dump();

    std::string out(kCheckpointMagic);
    detail::put_u64(out, header.size());
    out += header;
    for (const ModelParams* group : {&ck.params, &ck.adam.m, &ck.adam.v})
        for (const Tensor* t : group->tensors()) detail::put_reals(out, t->data);
    return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 16 || std::string_view(bytes.data(), 8) != kCheckpointMagic)
        throw FormatError("not a checkpoint file (bad magic)");
    const std::uint64_t hlen = detail::get_u64(p + 8);
    if (hlen > bytes.size() - 16) throw FormatError("truncated checkpoint header");

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.substr(16, hlen));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("invalid checkpoint header: ") + e.what());
    }
    Checkpoint ck;
    try {
        if (h.at("format_version").get<int>() != kCheckpointFormatVersion)
            throw FormatError("unsupported checkpoint format_version");
        ck.params = zero_params(arch_from_json(h.at("arch")));
        const auto& a = h.at("adam");
        ck.adam.m = zero_params(ck.params.arch);
        ck.adam.v = zero_params(ck.params.arch);
        ck.adam.t = a.at("t").get<std::int64_t>();
        ck.adam.lr = a.at("lr").get<double>();
        ck.adam.beta1 = a.at("beta1").get<double>();
        ck.adam.beta2 = a.at("beta2").get<double>();
        ck.adam.eps = a.at("eps").get<double>();
        ck.step = h.at("step").get<std::int64_t>();
        const auto shapes = h.at("shapes").get<std::vector<std::vector<int>>>();
        const auto expect = ck.params.tensors();
        if (shapes.size() != expect.size()) throw FormatError("checkpoint array count does not match arch");
        for (std::size_t i = 0; i < shapes.size(); ++i)
            if (shapes[i] != expect[i]->shape) throw FormatError("checkpoint array " + std::to_string(i) + " has wrong shape");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad checkpoint header: ") + e.what());
    }

    std::size_t offset = 16 + hlen;
    const std::size_t n = ck.params.parameter_count();
    if (bytes.size() - offset != 3 * n * 8)
        throw FormatError("checkpoint payload has " + std::to_string(bytes.size() - offset) + " bytes, expected " +
                          std::to_string(3 * n * 8));
    for (ModelParams* group : {&ck.params, &ck.adam.m, &ck.adam.v})
        for (Tensor* t : group->tensors())
            for (double& x : t->data) {
                x = std::bit_cast<double>(detail::get_u64(p + offset));
                offset += 8;
            }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    write_file_atomically(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace invdesign
