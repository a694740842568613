// corrvae command-line front end: dataset generation, training, evaluation,
// latent traversal and constrained generation, all seeded and config-driven.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "corrvae/eval.hpp"
#include "corrvae/model.hpp"
#include "corrvae/moo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace corrvae;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string read_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot read '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f << content;
}

fs::path resolve_out(std::string out) {
    if (out.empty()) {
        if (const char* env = std::getenv("CORRVAE_OUT")) out = env;
    }
    if (out.empty()) throw Error("no output directory: pass --out or set CORRVAE_OUT");
    fs::create_directories(out);
    return out;
}

// Flat dotted-key config file; command-line flags override file values.
struct ConfigMap {
    json values = json::object();

    void load_file(const std::string& path) {
        json file = json::parse(read_text(path));
        for (auto& [k, v] : file.items()) values[k] = v;
    }
    template <typename T>
    T get(const std::string& key, T fallback) const {
        if (!values.contains(key)) return fallback;
        return values.at(key).get<T>();
    }
    template <typename T>
    void set(const std::string& key, T v) {
        values[key] = v;
    }
    std::string dump() const { return values.dump(2) + "\n"; }
};

TrainConfig train_config_from(const ConfigMap& cfg) {
    TrainConfig c;  // field defaults are the shipped configuration
    c.dims.image_n = cfg.get<std::size_t>("model.image_n", c.dims.image_n);
    c.dims.latent_w = cfg.get<std::size_t>("model.latent_w", c.dims.latent_w);
    c.dims.latent_z = cfg.get<std::size_t>("model.latent_z", c.dims.latent_z);
    c.dims.properties = cfg.get<std::size_t>("model.properties", c.dims.properties);
    c.dims.enc_hidden = cfg.get<std::size_t>("model.enc_hidden", c.dims.enc_hidden);
    c.dims.agg_hidden = cfg.get<std::size_t>("model.agg_hidden", c.dims.agg_hidden);
    c.dims.head_hidden = cfg.get<std::size_t>("model.head_hidden", c.dims.head_hidden);
    c.rho1 = cfg.get<double>("loss.rho1", c.rho1);
    c.rho2 = cfg.get<double>("loss.rho2", c.rho2);
    c.lambda3 = cfg.get<double>("loss.lambda3", c.lambda3);
    c.lambda_mask = cfg.get<double>("loss.lambda_mask", c.lambda_mask);
    c.lip_c = cfg.get<double>("loss.lip_c", c.lip_c);
    c.lr = cfg.get<double>("train.lr", c.lr);
    c.batch = cfg.get<std::size_t>("train.batch", c.batch);
    c.epochs = cfg.get<std::size_t>("train.epochs", c.epochs);
    c.tau_start = cfg.get<double>("train.tau_start", c.tau_start);
    c.tau_end = cfg.get<double>("train.tau_end", c.tau_end);
    c.mask_mode = cfg.get<std::string>("train.mask_mode", "learned") == "ground_truth"
                      ? MaskMode::GroundTruth
                      : MaskMode::Learned;
    c.aggregator = cfg.get<std::string>("train.aggregator", "mlp") == "linear"
                       ? AggregatorKind::Linear
                       : AggregatorKind::Mlp;
    return c;
}

void store_train_config(ConfigMap& cfg, const TrainConfig& c) {
    cfg.set("model.image_n", c.dims.image_n);
    cfg.set("model.latent_w", c.dims.latent_w);
    cfg.set("model.latent_z", c.dims.latent_z);
    cfg.set("model.properties", c.dims.properties);
    cfg.set("model.enc_hidden", c.dims.enc_hidden);
    cfg.set("model.agg_hidden", c.dims.agg_hidden);
    cfg.set("model.head_hidden", c.dims.head_hidden);
    cfg.set("loss.rho1", c.rho1);
    cfg.set("loss.rho2", c.rho2);
    cfg.set("loss.lambda3", c.lambda3);
    cfg.set("loss.lambda_mask", c.lambda_mask);
    cfg.set("loss.lip_c", c.lip_c);
    cfg.set("train.lr", c.lr);
    cfg.set("train.batch", c.batch);
    cfg.set("train.epochs", c.epochs);
    cfg.set("train.tau_start", c.tau_start);
    cfg.set("train.tau_end", c.tau_end);
    cfg.set("train.seed", c.seed);
    cfg.set("train.mask_mode",
            c.mask_mode == MaskMode::GroundTruth ? "ground_truth" : "learned");
    cfg.set("train.aggregator",
            c.aggregator == AggregatorKind::Linear ? "linear" : "mlp");
}

SolveOptions solve_options_from(const ConfigMap& cfg) {
    SolveOptions o;
    o.restarts = cfg.get<std::size_t>("gen.restarts", 8);
    o.inner_steps = cfg.get<std::size_t>("gen.inner_steps", 500);
    o.outer_rounds = cfg.get<std::size_t>("gen.outer_rounds", 4);
    o.lr = cfg.get<double>("gen.lr", 0.05);
    o.prior_weight = cfg.get<double>("gen.mu", 0.02);
    o.converge_tol = cfg.get<double>("gen.converge_tol", 0.05);
    o.seed = cfg.get<std::uint64_t>("gen.seed", 0);
    return o;
}

void store_solve_options(ConfigMap& cfg, const SolveOptions& o) {
    cfg.set("gen.restarts", o.restarts);
    cfg.set("gen.inner_steps", o.inner_steps);
    cfg.set("gen.outer_rounds", o.outer_rounds);
    cfg.set("gen.lr", o.lr);
    cfg.set("gen.mu", o.prior_weight);
    cfg.set("gen.converge_tol", o.converge_tol);
    cfg.set("gen.seed", o.seed);
}

void write_manifest(const fs::path& out, const std::string& command, ConfigMap cfg) {
    cfg.set("command", command);
    cfg.set("version", kVersion);
    write_text(out / "config.json", cfg.dump());
}

std::string csv_mask(const Tensor& mask, const std::vector<std::string>& names) {
    std::string s = "latent";
    for (const auto& n : names) s += "," + n;
    s += "\n";
    const std::size_t l = mask.dim(0), m = mask.dim(1);
    for (std::size_t r = 0; r < l; ++r) {
        s += "w" + std::to_string(r);
        for (std::size_t c = 0; c < m; ++c) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), ",%.17g", mask.at(r * m + c));
            s += buf;
        }
        s += "\n";
    }
    return s;
}

int run_gen_data(std::size_t n, std::uint64_t seed, std::size_t image_n, const std::string& out) {
    fs::path dir = resolve_out(out);
    Dataset ds = make_dataset(n, seed, image_n);
    save_dataset(ds, (dir / "dataset.bin").string());

    json manifest;
    manifest["command"] = "gen-data";
    manifest["version"] = kVersion;
    manifest["seed"] = seed;
    manifest["n"] = n;
    manifest["image_n"] = image_n;
    manifest["property_names"] = ds.header.property_names;
    json ranges = json::array();
    for (auto [lo, hi] : ds.header.property_ranges) ranges.push_back({lo, hi});
    manifest["property_ranges"] = ranges;
    Tensor truth = ground_truth_mask(8);
    json mask_rows = json::array();
    for (std::size_t r = 0; r < 8; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < 4; ++c) row.push_back(truth.at(r * 4 + c) > 0.5 ? 1 : 0);
        mask_rows.push_back(row);
    }
    manifest["truth_mask"] = mask_rows;
    json pairs = json::array();
    for (auto [i, j] : ground_truth_pairs()) pairs.push_back({i, j});
    manifest["truth_pairs"] = pairs;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    std::printf("wrote %zu samples to %s\n", n, (dir / "dataset.bin").c_str());
    return 0;
}

int run_train(ConfigMap cfg, const std::string& data, const std::string& out) {
    fs::path dir = resolve_out(out);
    Dataset ds = load_dataset((fs::path(data) / "dataset.bin").string());

    TrainConfig tc = train_config_from(cfg);
    tc.seed = cfg.get<std::uint64_t>("train.seed", 0);
    tc.dims.image_n = ds.header.image_n;
    tc.dims.properties = ds.property_count();
    tc.property_names = ds.header.property_names;

    Rng rng(tc.seed);
    CorrVae model(tc, rng);
    TrainResult result = train(model, ds, rng);

    save_checkpoint(model, (dir / "model.ckpt").string());
    write_text(dir / "metrics.csv", result.metrics_csv);
    store_train_config(cfg, tc);
    write_manifest(dir, "train", cfg);
    std::printf("trained %zu epochs; final total loss %.4f\n", result.epochs.size(),
                result.epochs.back().total);
    return 0;
}

int run_eval(ConfigMap cfg, const std::string& ckpt, const std::string& data,
             std::size_t battery, std::size_t bins, const std::string& out) {
    fs::path dir = resolve_out(out);
    CorrVae model = load_checkpoint(ckpt);
    Dataset ds = load_dataset((fs::path(data) / "dataset.bin").string());
    SolveOptions opts = solve_options_from(cfg);

    EvalReport report = evaluate(model, ds, battery, bins, opts);
    const auto& names = model.config().property_names;
    write_text(dir / "eval_report.json", report.to_json_text(names) + "\n");
    write_text(dir / "eval_report.csv", report.to_csv(names));
    std::vector<std::string> wp_names;
    for (std::size_t i = 0; i < names.size(); ++i) wp_names.push_back("wp" + std::to_string(i));
    write_text(dir / "mi_matrix.csv", report.mi_matrix.to_csv(wp_names, names));
    store_solve_options(cfg, opts);
    cfg.set("eval.battery", battery);
    cfg.set("eval.bins", bins);
    write_manifest(dir, "eval", cfg);
    std::printf("%s", report.to_csv(names).c_str());
    return 0;
}

int run_generate(ConfigMap cfg, const std::string& ckpt, const std::string& spec_path,
                 std::size_t batch, const std::string& out) {
    fs::path dir = resolve_out(out);
    CorrVae model = load_checkpoint(ckpt);
    const auto& names = model.config().property_names;
    ConstraintSpec spec =
        ConstraintSpec::from_json_text(read_text(spec_path), names.size(), names);
    SolveOptions opts = solve_options_from(cfg);

    Rng rng(cfg.get<std::uint64_t>("gen.seed", 0));
    GenerationReport report = generate(model, spec, batch, rng, opts);
    for (std::size_t i = 0; i < report.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "gen_%03zu.pgm", i);
        write_pgm(report.images[i], (dir / name).string());
    }
    write_text(dir / "report.json", report.to_json_text(spec, names) + "\n");
    write_text(dir / "report.csv", report.to_csv(names));
    store_solve_options(cfg, opts);
    write_manifest(dir, "generate", cfg);
    std::printf("generated %zu images, converged=%s\n", report.images.size(),
                report.solve.converged ? "true" : "false");
    return 0;
}

int run_traverse(ConfigMap cfg, const std::string& ckpt, const std::string& space_name,
                 std::size_t index, double from, double to, std::size_t steps,
                 const std::string& out) {
    fs::path dir = resolve_out(out);
    CorrVae model = load_checkpoint(ckpt);
    TraverseSpace space = space_name == "wprime" ? TraverseSpace::WPrime : TraverseSpace::W;
    SolveOptions opts = solve_options_from(cfg);

    auto track = traverse(model, space, index, from, to, steps, opts);
    const auto& names = model.config().property_names;
    std::string csv = "step,coordinate";
    for (const auto& n : names) csv += ",model_" + n;
    for (const auto& n : names) csv += ",oracle_" + n;
    csv += "\n";
    for (std::size_t i = 0; i < track.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "trav_%03zu.pgm", i);
        write_pgm(track[i].image, (dir / name).string());
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g", i, track[i].coordinate);
        csv += buf;
        for (double v : track[i].model_properties) {
            std::snprintf(buf, sizeof(buf), ",%.17g", v);
            csv += buf;
        }
        if (track[i].oracle.empty()) {
            for (std::size_t k = 0; k < names.size(); ++k) csv += ",";
        } else {
            for (double v : track[i].oracle) {
                std::snprintf(buf, sizeof(buf), ",%.17g", v);
                csv += buf;
            }
        }
        csv += "\n";
    }
    write_text(dir / "track.csv", csv);
    cfg.set("traverse.space", space_name);
    cfg.set("traverse.index", index);
    cfg.set("traverse.from", from);
    cfg.set("traverse.to", to);
    cfg.set("traverse.steps", steps);
    write_manifest(dir, "traverse", cfg);
    std::printf("traversed %zu steps\n", track.size());
    return 0;
}

int run_inspect_mask(const std::string& ckpt, const std::string& out) {
    fs::path dir = resolve_out(out);
    CorrVae model = load_checkpoint(ckpt);
    const auto& names = model.config().property_names;
    write_text(dir / "mask_hard.csv", csv_mask(hard_mask(model.mask()), names));
    write_text(dir / "mask_sigmoid.csv", csv_mask(expected_mask(model.mask()), names));
    auto pairs = correlation_pairs(hard_mask(model.mask()));
    std::printf("hard mask written; %zu correlated property pairs:", pairs.size());
    for (auto [i, j] : pairs) std::printf(" (%s,%s)", names[i].c_str(), names[j].c_str());
    std::printf("\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"correlated-property VAE: training, evaluation and constrained generation"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, ckpt_path, spec_path, space_name = "w";
    std::size_t n = 5000, image_n = 16, batch = 8, battery = 25, bins = 16, index = 0, steps = 9;
    std::size_t epochs_override = 0;
    std::uint64_t seed = 0;
    bool seed_given = false;
    double from = -3.0, to = 3.0;

    auto* gen_data = app.add_subcommand("gen-data", "render a synthetic shapes dataset");
    gen_data->add_option("--n", n, "sample count");
    gen_data->add_option("--seed", seed, "dataset seed")->required();
    gen_data->add_option("--image-n", image_n, "canvas side length");
    gen_data->add_option("--out", out_dir, "output directory");

    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
    train_cmd->add_option("--config", config_path, "flat JSON config file");
    train_cmd->add_option("--data", data_dir, "dataset directory")->required();
    train_cmd->add_option("--out", out_dir, "output directory");
    train_cmd->add_option("--seed", seed, "training seed (overrides config)")
        ->each([&](const std::string&) { seed_given = true; });
    train_cmd->add_option("--epochs", epochs_override, "epoch override");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a held-out dataset");
    eval_cmd->add_option("--config", config_path, "flat JSON config file");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_dir, "held-out dataset directory")->required();
    eval_cmd->add_option("--battery", battery, "control battery size");
    eval_cmd->add_option("--bins", bins, "histogram bins for avgMI");
    eval_cmd->add_option("--seed", seed, "battery/solver seed")
        ->each([&](const std::string&) { seed_given = true; });
    eval_cmd->add_option("--out", out_dir, "output directory");

    auto* generate_cmd = app.add_subcommand("generate", "constrained generation from a spec file");
    generate_cmd->add_option("--config", config_path, "flat JSON config file");
    generate_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    generate_cmd->add_option("--spec", spec_path, "constraint spec JSON")->required();
    generate_cmd->add_option("--batch", batch, "images per spec");
    generate_cmd->add_option("--seed", seed, "solver/z seed")
        ->each([&](const std::string&) { seed_given = true; });
    generate_cmd->add_option("--out", out_dir, "output directory");

    auto* traverse_cmd = app.add_subcommand("traverse", "sweep one latent coordinate");
    traverse_cmd->add_option("--config", config_path, "flat JSON config file");
    traverse_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    traverse_cmd->add_option("--space", space_name, "w or wprime")
        ->check(CLI::IsMember({"w", "wprime"}));
    traverse_cmd->add_option("--index", index, "coordinate index")->required();
    traverse_cmd->add_option("--from", from, "sweep start");
    traverse_cmd->add_option("--to", to, "sweep end");
    traverse_cmd->add_option("--steps", steps, "number of frames");
    traverse_cmd->add_option("--out", out_dir, "output directory");

    auto* inspect_cmd = app.add_subcommand("inspect-mask", "export the learned mask as CSV");
    inspect_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    inspect_cmd->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        ConfigMap cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        if (seed_given) {
            cfg.set("train.seed", seed);
            cfg.set("gen.seed", seed);
        }

        if (gen_data->parsed()) return run_gen_data(n, seed, image_n, out_dir);
        if (train_cmd->parsed()) {
            if (epochs_override > 0) cfg.set("train.epochs", epochs_override);
            return run_train(cfg, data_dir, out_dir);
        }
        if (eval_cmd->parsed()) return run_eval(cfg, ckpt_path, data_dir, battery, bins, out_dir);
        if (generate_cmd->parsed())
            return run_generate(cfg, ckpt_path, spec_path, batch, out_dir);
        if (traverse_cmd->parsed())
            return run_traverse(cfg, ckpt_path, space_name, index, from, to, steps, out_dir);
        if (inspect_cmd->parsed()) return run_inspect_mask(ckpt_path, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
