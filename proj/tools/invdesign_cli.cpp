// invdesign: generate data, train, infer, evaluate and export images.
//
// Exit codes: 0 success, 1 runtime or IO error, 2 usage error or malformed input.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <invdesign/invdesign.hpp>

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace invdesign;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Run {
    explicit Run(std::string cmd) : command(std::move(cmd)) {}

    std::string command;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    std::string started_at = utc_timestamp();
    ordered_json config = ordered_json::object();
    ordered_json artifacts = ordered_json::object();
    ordered_json results = ordered_json::object();
    std::optional<std::uint64_t> seed;

    void write(const fs::path& path) const {
        ordered_json m;
        m["command"] = command;
        m["config"] = config;
        m["seed"] = seed ? ordered_json(*seed) : ordered_json();
        m["artifacts"] = artifacts;
        m["results"] = results;
        m["started_at"] = started_at;
        m["duration_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_file_atomically(path, m.dump(2) + "\n");
    }
};

std::vector<int> parse_widths(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int w = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(w);
        } catch (const std::exception&) {
            throw UsageError("--branch-widths expects comma-separated integers, got '" + text + "'");
        }
    }
    if (out.empty()) throw UsageError("--branch-widths is empty");
    return out;
}

GeometryEncoding parse_encoding(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            v.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw UsageError("--encoding expects 8 comma-separated numbers");
        }
    }
    if (v.size() != 8) throw UsageError("--encoding expects 8 comma-separated numbers");
    auto enc = GeometryEncoding::from_vector(std::span<const double, 8>(v.data(), 8));
    validate(enc);
    return enc;
}

const Sample& find_sample(const Dataset& ds, const std::string& id) {
    for (const auto& s : ds.samples)
        if (s.id == id) return s;
    throw Error("no sample with id '" + id + "' in dataset");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomically(path, text);
}

std::string spectra_csv(const Spectrum& s1, const Spectrum& s2, double epsilon_host) {
    std::string out = "wavelength_nm,s1,s2,epsilon_host\n";
    for (int i = 0; i < s1.grid.n_points; ++i)
        out += format_real(s1.grid.wavelength(i)) + "," + format_real(s1.values[std::size_t(i)]) + "," +
               format_real(s2.values[std::size_t(i)]) + "," + format_real(epsilon_host) + "\n";
    return out;
}

struct SplitOptions {
    double val_fraction = 0.05;
    std::optional<std::uint64_t> split_seed;
    std::string predicate = "l_family";

    void add(CLI::App* cmd) {
        cmd->add_option("--val-fraction", val_fraction, "Validation fraction of the non-holdout samples")
            ->capture_default_str();
        cmd->add_option("--split-seed", split_seed, "Seed of the validation draw (default: dataset seed)");
        cmd->add_option("--predicate", predicate, "Holdout family: l_family or l_or_steep_u")->capture_default_str();
    }
    std::uint64_t seed_for(const Dataset& ds) const { return split_seed.value_or(ds.header.seed); }
    DatasetSplit apply(const Dataset& ds) const { return split_dataset(ds.samples, val_fraction, seed_for(ds), predicate); }
    void record(ordered_json& cfg, const Dataset& ds) const {
        cfg["val_fraction"] = val_fraction;
        cfg["split_seed"] = seed_for(ds);
        cfg["predicate"] = predicate;
    }
};

// ---------------------------------------------------------------------------

struct GenDataCmd {
    std::string out, manifest;
    std::size_t n = 4200;
    std::uint64_t seed = 7;
    int d = 64, stroke_w = 4, n_points = 200;
    double lambda_min = 400.0, lambda_max = 1600.0, l_weight = 0.75;
    SplitOptions split;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("gen-data", "Generate a synthetic dataset file");
        c->add_option("--out", out, "Dataset file to write")->required();
        c->add_option("--n", n, "Number of samples")->capture_default_str();
        c->add_option("--seed", seed, "Generator seed")->capture_default_str();
        c->add_option("--d", d, "Image side in pixels")->capture_default_str();
        c->add_option("--stroke-w", stroke_w, "Edge thickness in pixels")->capture_default_str();
        c->add_option("--n-points", n_points, "Spectrum grid length")->capture_default_str();
        c->add_option("--lambda-min", lambda_min, "Grid start (nm)")->capture_default_str();
        c->add_option("--lambda-max", lambda_max, "Grid end (nm)")->capture_default_str();
        c->add_option("--l-weight", l_weight, "Relative sampling weight of L-family masks")->capture_default_str();
        c->add_option("--manifest", manifest, "Manifest path (default: <out>.manifest.json)");
        split.add(c);
        c->callback([this] { run(); });
    }

    void run() {
        Run r("gen-data");
        GenConfig cfg;
        cfg.n_samples = n;
        cfg.seed = seed;
        cfg.raster = {d, stroke_w};
        cfg.grid = {n_points, lambda_min, lambda_max};
        cfg.l_family_weight = l_weight;
        const Dataset ds = generate_dataset(cfg);
        save_dataset(ds, out);

        r.seed = seed;
        r.config = {{"n", n},           {"seed", seed},           {"d", d},
                    {"stroke_w", stroke_w}, {"n_points", n_points}, {"lambda_min", lambda_min},
                    {"lambda_max", lambda_max}, {"l_weight", l_weight}};
        split.record(r.config, ds);
        r.artifacts["dataset"] = out;
        ordered_json counts = {{"samples", ds.samples.size()}};
        try {
            const auto sp = split.apply(ds);
            counts["train"] = sp.train.size();
            counts["validation"] = sp.validation.size();
            counts["test"] = sp.test.size();
        } catch (const EmptySplit& e) {
            counts["split_error"] = e.what();
        }
        r.results["counts"] = counts;
        r.write(manifest.empty() ? out + ".manifest.json" : manifest);
        std::cout << "wrote " << ds.samples.size() << " samples to " << out << "\n";
    }
};

struct TrainCmd {
    std::string data, out, history, manifest, preset, branch_widths = "250,250";
    std::int64_t max_steps = 20000, eval_every = 200;
    int batch_size = 64, patience = 10, channels = 10;
    double lr = 1e-5, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t seed = 1;
    bool linear_head = false, quiet = false;
    SplitOptions split;
    CLI::App* cmd = nullptr;

    void add(CLI::App& app) {
        auto* c = cmd = app.add_subcommand("train", "Train the network on a dataset file");
        c->add_option("--data", data, "Dataset file")->required();
        c->add_option("--out", out, "Checkpoint file for the best parameters")->required();
        c->add_option("--history", history, "History CSV (default: <out>.history.csv)");
        c->add_option("--preset", preset, "paper, desk or overfit16; explicit flags override it");
        c->add_option("--max-steps", max_steps)->capture_default_str();
        c->add_option("--batch-size", batch_size)->capture_default_str();
        c->add_option("--lr", lr)->capture_default_str();
        c->add_option("--beta1", beta1)->capture_default_str();
        c->add_option("--beta2", beta2)->capture_default_str();
        c->add_option("--eps", eps)->capture_default_str();
        c->add_option("--eval-every", eval_every)->capture_default_str();
        c->add_option("--patience", patience)->capture_default_str();
        c->add_option("--seed", seed, "Initialisation and batch sampling seed")->capture_default_str();
        c->add_option("--branch-widths", branch_widths, "Fully connected widths per branch")->capture_default_str();
        c->add_option("--channels", channels, "Filters in the first two conv layers (presets may change it)")
            ->capture_default_str();
        c->add_flag("--linear-head", linear_head, "No ReLU after the last conv layer");
        c->add_flag("--quiet", quiet, "No progress output");
        c->add_option("--manifest", manifest, "Manifest path (default: <out>.manifest.json)");
        split.add(c);
        c->callback([this] { run(); });
    }

    bool given(const char* name) const { return cmd->count(name) > 0; }

    TrainConfig resolve() const {
        TrainConfig t = preset.empty() ? TrainConfig{} : train_preset(preset);
        if (given("--max-steps") || preset.empty()) t.max_steps = max_steps;
        if (given("--batch-size") || preset.empty()) t.batch_size = batch_size;
        if (given("--lr") || preset.empty()) t.adam.lr = lr;
        if (given("--beta1") || preset.empty()) t.adam.beta1 = beta1;
        if (given("--beta2") || preset.empty()) t.adam.beta2 = beta2;
        if (given("--eps") || preset.empty()) t.adam.eps = eps;
        if (given("--eval-every") || preset.empty()) t.eval_every = eval_every;
        if (given("--patience") || preset.empty()) t.patience = patience;
        t.seed = seed;
        return t;
    }

    void run() {
        Run r("train");
        const Dataset ds = load_dataset(data);
        ArchConfig arch;
        arch.branch_widths = parse_widths(branch_widths);
        arch.d = ds.header.raster.d;
        arch.n_points = ds.header.grid.n_points;
        arch.channels = given("--channels") || preset.empty() ? channels : preset_arch(preset).channels;
        arch.linear_head = linear_head;
        const TrainConfig t = resolve();

        DatasetSplit sp = split.apply(ds);
        if (preset == "overfit16") {
            if (sp.train.size() < 16) throw EmptySplit("overfit16 needs at least 16 training samples");
            sp.train.resize(16);
            sp.validation = sp.train;
        }

        auto observe = [&](const TrainRecord& rec) {
            if (!quiet)
                std::cerr << "step " << rec.step << "  train " << format_real(rec.train_loss) << "  val "
                          << format_real(rec.val_loss) << "\n";
        };
        const TrainResult res = train(arch, t, sp, observe);
        save_checkpoint({res.params, res.adam, res.history.best_step}, out);
        const std::string hist_path = history.empty() ? out + ".history.csv" : history;
        write_text(hist_path, history_csv(res.history));

        const double train_loss = evaluate_loss(res.params, sp.train);
        const double val_loss = evaluate_loss(res.params, sp.validation);

        r.seed = seed;
        r.config = {{"data", data},
                    {"preset", preset},
                    {"max_steps", t.max_steps},
                    {"batch_size", t.batch_size},
                    {"lr", t.adam.lr},
                    {"beta1", t.adam.beta1},
                    {"beta2", t.adam.beta2},
                    {"eps", t.adam.eps},
                    {"eval_every", t.eval_every},
                    {"patience", t.patience},
                    {"seed", t.seed},
                    {"arch", arch_json(arch)}};
        split.record(r.config, ds);
        r.artifacts = {{"checkpoint", out}, {"history", hist_path}};
        r.results = {{"train_samples", sp.train.size()},
                     {"validation_samples", sp.validation.size()},
                     {"best_step", res.history.best_step},
                     {"stopped_reason", stop_reason_name(res.history.stopped_reason)},
                     {"final_train_loss", train_loss},
                     {"final_val_loss", val_loss}};
        r.write(manifest.empty() ? out + ".manifest.json" : manifest);
        std::cout << "best step " << res.history.best_step << " (" << stop_reason_name(res.history.stopped_reason)
                  << ")\nfinal train loss (mean per pixel) " << format_real(train_loss)
                  << "\nfinal validation loss (mean per pixel) " << format_real(val_loss) << "\n";
    }
};

struct InferCmd {
    std::string checkpoint, data, spectra, out_dir;
    std::vector<std::string> ids;
    double tau = 0.5;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("infer", "Generate designs for dataset samples or a spectra file");
        c->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
        auto* d = c->add_option("--data", data, "Dataset file (with --id)");
        c->add_option("--id", ids, "Sample id(s) within --data")
            ->needs(d)
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        auto* s = c->add_option("--spectra", spectra, "Line-delimited spectra records");
        s->excludes(d);
        c->add_option("--out-dir", out_dir, "Directory for <id>.raw.pgm and <id>.bin.pgm")->required();
        c->add_option("--tau", tau, "Binarization threshold")->capture_default_str();
        c->callback([this] { run(); });
    }

    void run() {
        if (data.empty() == spectra.empty()) throw UsageError("give exactly one of --data/--id or --spectra");
        if (!data.empty() && ids.empty()) throw UsageError("--data needs at least one --id");
        const Checkpoint ck = load_checkpoint(checkpoint);
        const ArchConfig& arch = ck.params.arch;

        std::vector<SpectraQuery> queries;
        if (!spectra.empty()) {
            queries = parse_spectra_queries(read_file(spectra), std::size_t(arch.n_points));
        } else {
            const Dataset ds = load_dataset(data);
            for (const auto& id : ids) {
                const Sample& s = find_sample(ds, id);
                queries.push_back({s.id, s.s1.values, s.s2.values, s.material.epsilon_host});
            }
        }
        fs::create_directories(out_dir);
        Run r("infer");
        r.config = {{"checkpoint", checkpoint}, {"data", data}, {"spectra", spectra}, {"tau", tau}};
        for (const auto& q : queries) {
            if (q.s1.size() != std::size_t(arch.n_points) || q.s2.size() != std::size_t(arch.n_points))
                throw ShapeMismatch("spectra of '" + q.id + "' do not match the checkpoint's n_points");
            const PixelGrid g = forward(ck.params, q.s1, q.s2, q.epsilon_host);
            const auto raw = fs::path(out_dir) / (q.id + ".raw.pgm");
            const auto bin = fs::path(out_dir) / (q.id + ".bin.pgm");
            write_text(raw, to_pgm(g));
            write_text(bin, to_pgm(binarize(g, tau)));
            r.artifacts[q.id] = {{"raw", raw.string()}, {"binarized", bin.string()}};
        }
        r.write(fs::path(out_dir) / "manifest.json");
        std::cout << "wrote " << queries.size() << " design(s) to " << out_dir << "\n";
    }
};

struct EvalCmd {
    std::string checkpoint, data, out_dir, which = "test";
    double tau = 0.5;
    bool images = false;
    SplitOptions split;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
        c->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
        c->add_option("--data", data, "Dataset file")->required();
        c->add_option("--out-dir", out_dir, "Directory for report.csv, summary.txt, manifest.json")->required();
        c->add_option("--split", which, "test, validation or train")
            ->check(CLI::IsMember({"test", "validation", "train"}))
            ->capture_default_str();
        c->add_option("--tau", tau, "Binarization threshold")->capture_default_str();
        c->add_flag("--images", images, "Also write spectra CSV, prediction and ground-truth PGM per sample");
        split.add(c);
        c->callback([this] { run(); });
    }

    void run() {
        const Checkpoint ck = load_checkpoint(checkpoint);
        const Dataset ds = load_dataset(data);
        const DatasetSplit sp = split.apply(ds);
        const auto& samples = which == "test" ? sp.test : which == "validation" ? sp.validation : sp.train;
        if (samples.empty()) throw EmptySplit("the " + which + " split is empty");

        const auto preds = predict(ck.params, samples);
        const EvalReport rep = evaluate_predictions(samples, preds, tau);
        fs::create_directories(out_dir);
        const fs::path dir(out_dir);
        write_text(dir / "report.csv", report_csv(rep));
        write_text(dir / "summary.txt", report_summary(rep));

        Run r("eval");
        r.config = {{"checkpoint", checkpoint}, {"data", data}, {"split", which}, {"tau", tau}, {"images", images}};
        split.record(r.config, ds);
        r.artifacts = {{"report", (dir / "report.csv").string()}, {"summary", (dir / "summary.txt").string()}};
        if (images) {
            for (std::size_t i = 0; i < samples.size(); ++i) {
                const auto& s = samples[i];
                write_text(dir / "images" / (s.id + ".spectra.csv"), spectra_csv(s.s1, s.s2, s.material.epsilon_host));
                write_text(dir / "images" / (s.id + ".pred.pgm"), to_pgm(binarize(preds[i], tau)));
                write_text(dir / "images" / (s.id + ".truth.pgm"), to_pgm(s.image));
            }
            r.artifacts["images"] = (dir / "images").string();
        }
        r.results = {{"samples", rep.records.size()},
                     {"loss_mean", rep.loss.mean},
                     {"loss_median", rep.loss.median},
                     {"iou_mean", rep.iou.mean},
                     {"iou_median", rep.iou.median},
                     {"sym_iou_mean", rep.sym_iou.mean},
                     {"sym_iou_median", rep.sym_iou.median}};
        r.write(dir / "manifest.json");
        std::cout << report_summary(rep);
    }
};

struct ExportImageCmd {
    std::string data, id, encoding, out;
    int d = 64, stroke_w = 4;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("export-image", "Write a ground-truth or rasterized encoding as PGM");
        auto* dd = c->add_option("--data", data, "Dataset file (with --id)");
        c->add_option("--id", id, "Sample id within --data")->needs(dd);
        auto* e = c->add_option("--encoding", encoding,
                                "tl,bl,tr,br,inner,outer_len,inner_len,angle_deg (presence as 0/1)");
        e->excludes(dd);
        c->add_option("--d", d, "Image side for --encoding")->capture_default_str();
        c->add_option("--stroke-w", stroke_w, "Stroke width for --encoding")->capture_default_str();
        c->add_option("--out", out, "PGM file to write")->required();
        c->callback([this] { run(); });
    }

    void run() {
        if (data.empty() == encoding.empty()) throw UsageError("give exactly one of --data/--id or --encoding");
        BinaryImage img;
        if (!data.empty()) {
            if (id.empty()) throw UsageError("--data needs --id");
            const Dataset ds = load_dataset(data);
            img = find_sample(ds, id).image;
        } else {
            const auto res = rasterize_with_flags(parse_encoding(encoding), RasterConfig{d, stroke_w});
            if (res.clipped) std::cerr << "warning: geometry clipped at the canvas border\n";
            img = res.image;
        }
        write_text(out, to_pgm(img));
        std::cout << "wrote " << out << "\n";
    }
};

// `--config FILE` holds a JSON object whose keys are flag names; its entries
// are spliced in right after the subcommand so explicit flags, which come
// later, win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::optional<std::string> path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a file argument");
            path = args[i + 1];
            args.erase(args.begin() + std::ptrdiff_t(i), args.begin() + std::ptrdiff_t(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + std::ptrdiff_t(i));
            break;
        }
    }
    if (!path) return args;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(*path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("config file must hold a JSON object");
    std::vector<std::string> injected;
    for (const auto& [key, value] : j.items()) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (value.is_boolean()) {
            if (value.get<bool>()) injected.push_back(flag);
        } else if (value.is_array()) {
            for (const auto& v : value) {
                injected.push_back(flag);
                injected.push_back(v.is_string() ? v.get<std::string>() : v.dump());
            }
        } else if (value.is_string()) {
            injected.push_back(flag);
            injected.push_back(value.get<std::string>());
        } else if (value.is_number_float()) {
            injected.push_back(flag);
            injected.push_back(format_real(value.get<double>()));
        } else if (value.is_number()) {
            injected.push_back(flag);
            injected.push_back(value.dump());
        } else {
            throw FormatError("config entry '" + key + "' has an unsupported type");
        }
    }
    // args[0] is the subcommand (if any)
    const auto pos = args.empty() ? args.begin() : args.begin() + 1;
    args.insert(pos, injected.begin(), injected.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectra-to-image inverse design: data generation, training and evaluation"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    GenDataCmd gen;
    TrainCmd tr;
    InferCmd inf;
    EvalCmd ev;
    ExportImageCmd ex;
    gen.add(app);
    tr.add(app);
    inf.add(app);
    ev.add(app);
    ex.add(app);

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());  // CLI11 consumes the vector from the back
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidEncoding& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidMaterial& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NonFiniteLoss& e) {
        std::cerr << "error: training diverged: " << e.what() << " (step " << e.step() << ")\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
