#include <cstring>
#include <fstream>

#include <json.hpp>

#include "corrvae/model.hpp"

namespace corrvae {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

using nlohmann::json;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("checkpoint truncated");
    return v;
}

void write_blob(std::ostream& os, const std::string& name, const Shape& shape,
                const std::vector<double>& values) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
}

struct Blob {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

Blob read_blob(std::istream& is) {
    Blob b;
    auto name_len = read_pod<std::uint32_t>(is);
    b.name.resize(name_len);
    is.read(b.name.data(), name_len);
    auto ndim = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < ndim; ++i) b.shape.push_back(read_pod<std::uint64_t>(is));
    b.values.resize(numel(b.shape));
    is.read(reinterpret_cast<char*>(b.values.data()),
            static_cast<std::streamsize>(b.values.size() * sizeof(double)));
    if (!is) throw Error("checkpoint truncated");
    return b;
}

json config_to_json(const TrainConfig& c) {
    json j;
    j["dims"] = {{"image_n", c.dims.image_n},     {"latent_w", c.dims.latent_w},
                 {"latent_z", c.dims.latent_z},   {"properties", c.dims.properties},
                 {"enc_hidden", c.dims.enc_hidden}, {"agg_hidden", c.dims.agg_hidden},
                 {"head_hidden", c.dims.head_hidden}};
    j["rho1"] = c.rho1;
    j["rho2"] = c.rho2;
    j["lambda3"] = c.lambda3;
    j["lambda_mask"] = c.lambda_mask;
    j["lip_c"] = c.lip_c;
    j["lr"] = c.lr;
    j["batch"] = c.batch;
    j["epochs"] = c.epochs;
    j["tau_start"] = c.tau_start;
    j["tau_end"] = c.tau_end;
    j["seed"] = c.seed;
    j["mask_mode"] = c.mask_mode == MaskMode::GroundTruth ? "ground_truth" : "learned";
    j["aggregator"] = c.aggregator == AggregatorKind::Linear ? "linear" : "mlp";
    j["property_names"] = c.property_names;
    return j;
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    const json& d = j.at("dims");
    c.dims.image_n = d.at("image_n").get<std::size_t>();
    c.dims.latent_w = d.at("latent_w").get<std::size_t>();
    c.dims.latent_z = d.at("latent_z").get<std::size_t>();
    c.dims.properties = d.at("properties").get<std::size_t>();
    c.dims.enc_hidden = d.at("enc_hidden").get<std::size_t>();
    c.dims.agg_hidden = d.at("agg_hidden").get<std::size_t>();
    c.dims.head_hidden = d.at("head_hidden").get<std::size_t>();
    c.rho1 = j.at("rho1").get<double>();
    c.rho2 = j.at("rho2").get<double>();
    c.lambda3 = j.at("lambda3").get<double>();
    c.lambda_mask = j.at("lambda_mask").get<double>();
    c.lip_c = j.at("lip_c").get<double>();
    c.lr = j.at("lr").get<double>();
    c.batch = j.at("batch").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.tau_start = j.at("tau_start").get<double>();
    c.tau_end = j.at("tau_end").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.mask_mode = j.at("mask_mode") == "ground_truth" ? MaskMode::GroundTruth : MaskMode::Learned;
    c.aggregator = j.at("aggregator") == "linear" ? AggregatorKind::Linear : AggregatorKind::Mlp;
    c.property_names = j.at("property_names").get<std::vector<std::string>>();
    return c;
}

}  // namespace

void save_checkpoint(const CorrVae& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");

    os.write(kMagic, 4);
    write_pod<std::uint32_t>(os, kVersion);

    json cfg = config_to_json(model.config_);
    cfg["mask_tau"] = model.mask_.tau;
    std::string cfg_str = cfg.dump();
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(cfg_str.size()));
    os.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));

    ParamRegistry reg = model.parameters();
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<double>>>> blobs;
    for (const auto& [name, t] : reg.entries) blobs.push_back({name, {t.shape(), t.values()}});
    for (std::size_t i = 0; i < model.head_.layer_count(); ++i) {
        auto& state = const_cast<CorrVae&>(model).head_.layer_state(i);
        blobs.push_back({"head." + std::to_string(i) + ".sn_u",
                         {{state.u.size()}, state.u}});
        blobs.push_back({"head." + std::to_string(i) + ".sn_v",
                         {{state.v.size()}, state.v}});
    }

    write_pod<std::uint64_t>(os, blobs.size());
    for (const auto& [name, sv] : blobs) write_blob(os, name, sv.first, sv.second);
    if (!os) throw Error("write to '" + path + "' failed");
}

CorrVae load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw Error("'" + path + "' is not a checkpoint file");
    if (read_pod<std::uint32_t>(is) != kVersion) throw Error("unsupported checkpoint version");

    auto cfg_len = read_pod<std::uint32_t>(is);
    std::string cfg_str(cfg_len, '\0');
    is.read(cfg_str.data(), cfg_len);
    json cfg = json::parse(cfg_str);

    TrainConfig config = config_from_json(cfg);
    Rng init_rng(config.seed);
    CorrVae model(config, init_rng);
    model.mask_.tau = cfg.at("mask_tau").get<double>();

    auto count = read_pod<std::uint64_t>(is);
    ParamRegistry reg = model.parameters();
    for (std::uint64_t i = 0; i < count; ++i) {
        Blob b = read_blob(is);
        if (b.name.ends_with(".sn_u") || b.name.ends_with(".sn_v")) {
            std::size_t layer = std::stoul(b.name.substr(5));
            auto& state = model.head_.layer_state(layer);
            (b.name.ends_with(".sn_u") ? state.u : state.v) = b.values;
            continue;
        }
        Tensor t = reg.find(b.name);
        if (t.shape() != b.shape)
            throw Error("checkpoint blob '" + b.name + "' has shape " + shape_str(b.shape) +
                        ", expected " + shape_str(t.shape()));
        t.mutable_values() = b.values;
    }
    model.head_.normalize_exact();
    return model;
}

}  // namespace corrvae
