#include "skipdet/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace skipdet::ckpt {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw std::invalid_argument(where + ": unknown key \"" + key + "\"");
    }
}

template <std::size_t N>
std::array<int, N> array_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != N)
        throw std::invalid_argument(where + ": expected an array of " + std::to_string(N));
    std::array<int, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = j[i].get<int>();
    return out;
}

json backbone_to_json(const BackboneConfig& bb) {
    json j;
    j["in_h"] = bb.in_h;
    j["in_w"] = bb.in_w;
    j["in_ch"] = bb.in_ch;
    j["alpha"] = bb.alpha;
    j["stage_layers"] = bb.stage_layers;
    j["base_channels"] = bb.base_channels;
    j["expansion"] = bb.expansion;
    return j;
}

BackboneConfig backbone_from_json(const json& j) {
    reject_unknown_keys(
        j, {"in_h", "in_w", "in_ch", "alpha", "stage_layers", "base_channels", "expansion"},
        "backbone config");
    BackboneConfig bb;
    bb.in_h = j.at("in_h").get<int>();
    bb.in_w = j.at("in_w").get<int>();
    bb.in_ch = j.at("in_ch").get<int>();
    bb.alpha = j.at("alpha").get<float>();
    bb.stage_layers = array_from_json<5>(j.at("stage_layers"), "backbone config stage_layers");
    bb.base_channels = array_from_json<5>(j.at("base_channels"), "backbone config base_channels");
    bb.expansion = j.at("expansion").get<int>();
    return bb;
}

json ee_to_json(const EEBranchConfig& ee) {
    json j;
    j["attach_layer"] = ee.attach_layer;
    j["mid_channels"] = ee.mid_channels;
    j["fc_hidden"] = ee.fc_hidden;
    return j;
}

EEBranchConfig ee_from_json(const json& j) {
    reject_unknown_keys(j, {"attach_layer", "mid_channels", "fc_hidden"}, "ee config");
    EEBranchConfig ee;
    ee.attach_layer = j.at("attach_layer").get<int>();
    ee.mid_channels = j.at("mid_channels").get<int>();
    ee.fc_hidden = j.at("fc_hidden").get<int>();
    return ee;
}

json heads_to_json(const HeadConfig& hc) {
    json j;
    j["num_classes"] = hc.num_classes;
    j["scales_s4"] = hc.scales_s4;
    j["scales_s5"] = hc.scales_s5;
    j["aspect_ratios"] = hc.aspect_ratios;
    return j;
}

HeadConfig heads_from_json(const json& j) {
    reject_unknown_keys(j, {"num_classes", "scales_s4", "scales_s5", "aspect_ratios"},
                        "head config");
    HeadConfig hc;
    hc.num_classes = j.at("num_classes").get<int>();
    hc.scales_s4 = j.at("scales_s4").get<std::vector<float>>();
    hc.scales_s5 = j.at("scales_s5").get<std::vector<float>>();
    hc.aspect_ratios = j.at("aspect_ratios").get<std::vector<float>>();
    return hc;
}

json arch_json(const BackboneConfig& bb, const std::optional<EEBranchConfig>& ee,
               const HeadConfig& hc) {
    json j;
    j["backbone"] = backbone_to_json(bb);
    j["ee"] = ee ? ee_to_json(*ee) : json(nullptr);
    j["heads"] = heads_to_json(hc);
    return j;
}

void arch_parse(const json& j, BackboneConfig& bb, std::optional<EEBranchConfig>& ee,
                HeadConfig& hc) {
    reject_unknown_keys(j, {"backbone", "ee", "heads"}, "architecture");
    bb = backbone_from_json(j.at("backbone"));
    const json& je = j.at("ee");
    ee = je.is_null() ? std::nullopt : std::optional<EEBranchConfig>(ee_from_json(je));
    hc = heads_from_json(j.at("heads"));
}

}  // namespace

std::string arch_to_json(const BackboneConfig& bb, const std::optional<EEBranchConfig>& ee,
                         const HeadConfig& hc) {
    return arch_json(bb, ee, hc).dump();
}

void arch_from_json(const std::string& text, BackboneConfig& bb, std::optional<EEBranchConfig>& ee,
                    HeadConfig& hc) {
    arch_parse(json::parse(text), bb, ee, hc);
}

long long Checkpoint::tensor_elements() const {
    long long n = 0;
    for (const auto& [name, t] : tensors) n += (long long)(t.numel());
    return n;
}

Checkpoint snapshot(ModelGraph& model, int epoch, std::uint64_t seed,
                    const train::RmsPropState* opt) {
    Checkpoint c;
    c.backbone = model.backbone_config();
    c.ee = model.ee_config();
    c.heads = model.head_config();
    c.epoch = epoch;
    c.seed = seed;
    auto params = model.params();
    for (const auto& p : params) c.tensors.emplace_back(p.name, *p.tensor);
    for (const auto& b : model.buffers()) c.tensors.emplace_back(b.name, *b.tensor);
    // stored weight copies carry no gradient buffers
    for (auto& [name, t] : c.tensors) t.grad.clear();
    if (opt) {
        if (opt->sq.size() != params.size())
            throw std::invalid_argument("snapshot: optimizer state does not match parameter list");
        c.opt_sq = opt->sq;
    }
    return c;
}

void restore(const Checkpoint& c, ModelGraph& model, train::RmsPropState* opt_out) {
    std::vector<std::pair<std::string, Tensor*>> live;
    auto params = model.params();
    for (const auto& p : params) live.emplace_back(p.name, p.tensor);
    for (const auto& b : model.buffers()) live.emplace_back(b.name, b.tensor);
    if (live.size() != c.tensors.size())
        throw std::invalid_argument("restore: checkpoint holds " +
                                    std::to_string(c.tensors.size()) + " tensors, model has " +
                                    std::to_string(live.size()));
    for (std::size_t i = 0; i < live.size(); ++i) {
        const auto& [name, stored] = c.tensors[i];
        if (name != live[i].first)
            throw std::invalid_argument("restore: tensor " + std::to_string(i) + " is \"" + name +
                                        "\", model expects \"" + live[i].first + "\"");
        check_shape(stored.shape, live[i].second->shape, "restore " + name);
        live[i].second->data = stored.data;
    }
    if (opt_out) {
        if (c.opt_sq.empty()) throw std::invalid_argument("restore: no optimizer state stored");
        if (c.opt_sq.size() != params.size())
            throw std::invalid_argument("restore: optimizer state does not match parameter list");
        for (std::size_t i = 0; i < params.size(); ++i)
            if (c.opt_sq[i].size() != params[i].tensor->numel())
                throw std::invalid_argument("restore: optimizer moment size mismatch for " +
                                            params[i].name);
        opt_out->sq = c.opt_sq;
    }
}

ModelGraph build_model(const Checkpoint& c) {
    ModelGraph model(c.backbone, c.ee, c.heads, c.seed);
    restore(c, model);
    return model;
}

void save(const Checkpoint& c, const std::filesystem::path& path) {
    json h;
    h["format_version"] = c.format_version;
    h["arch"] = arch_json(c.backbone, c.ee, c.heads);
    h["epoch"] = c.epoch;
    h["seed"] = c.seed;
    json manifest = json::array();
    for (const auto& [name, t] : c.tensors) manifest.push_back({{"name", name}, {"shape", t.shape}});
    h["tensors"] = manifest;
    json opt_lens = json::array();
    for (const auto& sq : c.opt_sq) opt_lens.push_back(sq.size());
    h["opt_sq_lengths"] = opt_lens;

    std::string js = h.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint save: cannot open " + path.string());
    f.write(kMagic, sizeof(kMagic));
    std::uint64_t len = js.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(js.data(), std::streamsize(js.size()));
    for (const auto& [name, t] : c.tensors)
        f.write(reinterpret_cast<const char*>(t.data.data()),
                std::streamsize(t.data.size() * sizeof(float)));
    for (const auto& sq : c.opt_sq)
        f.write(reinterpret_cast<const char*>(sq.data()),
                std::streamsize(sq.size() * sizeof(float)));
    if (!f) throw std::runtime_error("checkpoint save: write failed for " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint load: cannot open " + path.string());
    char magic[sizeof(kMagic)];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint load: bad magic in " + path.string());
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string js(static_cast<std::size_t>(len), '\0');
    f.read(js.data(), std::streamsize(js.size()));
    if (!f) throw std::runtime_error("checkpoint load: truncated header in " + path.string());

    json h = json::parse(js);
    reject_unknown_keys(h, {"format_version", "arch", "epoch", "seed", "tensors", "opt_sq_lengths"},
                        "checkpoint header");
    Checkpoint c;
    c.format_version = h.at("format_version").get<int>();
    if (c.format_version != 1)
        throw std::runtime_error("checkpoint load: unsupported format version " +
                                 std::to_string(c.format_version));
    arch_parse(h.at("arch"), c.backbone, c.ee, c.heads);
    c.epoch = h.at("epoch").get<int>();
    c.seed = h.at("seed").get<std::uint64_t>();

    for (const json& m : h.at("tensors")) {
        reject_unknown_keys(m, {"name", "shape"}, "tensor manifest entry");
        Tensor t(m.at("shape").get<std::vector<int>>());
        f.read(reinterpret_cast<char*>(t.data.data()),
               std::streamsize(t.data.size() * sizeof(float)));
        c.tensors.emplace_back(m.at("name").get<std::string>(), std::move(t));
    }
    for (const json& n : h.at("opt_sq_lengths")) {
        std::vector<float> sq(n.get<std::size_t>());
        f.read(reinterpret_cast<char*>(sq.data()), std::streamsize(sq.size() * sizeof(float)));
        c.opt_sq.push_back(std::move(sq));
    }
    if (!f) throw std::runtime_error("checkpoint load: truncated blobs in " + path.string());
    f.peek();
    if (!f.eof()) throw std::runtime_error("checkpoint load: trailing bytes in " + path.string());
    return c;
}

}  // namespace skipdet::ckpt
