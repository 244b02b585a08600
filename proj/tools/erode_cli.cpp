#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "erode/config.hpp"
#include "erode/harness.hpp"
#include "erode/image.hpp"
#include "erode/rng.hpp"
#include "erode/version.hpp"

namespace fs = std::filesystem;
using namespace erode;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<double> epsilon;
    std::optional<int> iterations;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON experiment config (defaults used when absent)");
    cmd->add_option("--epsilon", flags.epsilon, "max L-inf perturbation in pixel units");
    cmd->add_option("--iterations", flags.iterations, "attack iteration count");
    cmd->add_option("--seed", flags.seed, "attack master seed");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--workers", flags.workers, "worker threads (0 = hardware)");
}

ExperimentConfig load_config(const CommonFlags& flags) {
    json overrides = json::object();
    if (flags.epsilon) overrides["epsilon"] = *flags.epsilon;
    if (flags.iterations) overrides["iterations"] = *flags.iterations;
    if (flags.seed) overrides["master_seed"] = *flags.seed;
    if (flags.out) overrides["out_dir"] = *flags.out;
    if (flags.workers) overrides["workers"] = *flags.workers;
    ExperimentConfig c = flags.config_path.empty() ? parse_config_json(json::object(), overrides)
                                                   : parse_config_file(flags.config_path, overrides);
    return c;
}

int effective_workers(const ExperimentConfig& c) {
    if (c.workers > 0) return c.workers;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

std::string model_path(const ExperimentConfig& c, const std::string& name) {
    return c.out_dir + "/models/" + name + ".erode-model";
}

Model load_trained(const ExperimentConfig& c, const std::string& name) {
    const std::string path = model_path(c, name);
    if (!fs::exists(path))
        throw LoadError("missing model file " + path + "; run 'erode train' first");
    return load_model(path);
}

// Loads every model the harness section references, keyed by name.
std::map<std::string, Model> load_zoo(const ExperimentConfig& c) {
    std::map<std::string, Model> zoo;
    auto want = [&](const std::string& n) {
        if (!zoo.count(n)) zoo.emplace(n, load_trained(c, n));
    };
    for (const auto& group : c.sources)
        for (const std::string& n : group) want(n);
    for (const std::string& n : c.targets) want(n);
    return zoo;
}

EnsembleSpec make_ensemble(const ExperimentConfig& c, const std::map<std::string, Model>& zoo,
                           const std::vector<std::string>& names) {
    EnsembleSpec e;
    for (const std::string& n : names) {
        EnsembleMember m;
        m.model = &zoo.at(n);
        m.erosion = c.erosion_for(n);
        e.members.push_back(m);
    }
    e.weights.assign(names.size(), 1.0 / static_cast<double>(names.size()));
    return e;
}

std::vector<EnsembleSpec> make_sources(const ExperimentConfig& c, const std::map<std::string, Model>& zoo) {
    std::vector<EnsembleSpec> out;
    for (const auto& group : c.sources) out.push_back(make_ensemble(c, zoo, group));
    return out;
}

std::vector<const Model*> make_targets(const ExperimentConfig& c, const std::map<std::string, Model>& zoo) {
    std::vector<const Model*> out;
    for (const std::string& n : c.targets) out.push_back(&zoo.at(n));
    return out;
}

int cmd_gen_data(const ExperimentConfig& c) {
    Dataset ds = make_synthetic_dataset(c.dataset_seed, c.classes, c.per_class, c.shape);
    std::vector<int> per_class(static_cast<std::size_t>(c.classes), 0);
    for (int l : ds.labels) ++per_class[static_cast<std::size_t>(l)];
    std::cout << "dataset: " << ds.size() << " examples, " << ds.train_indices.size() << " train / "
              << ds.eval_indices.size() << " eval, shape " << shape_str(c.shape) << "\n";
    std::cout << "per-class counts:";
    for (int n : per_class) std::cout << " " << n;
    std::cout << "\npixel range: [" << min_value(ds.inputs) << ", " << max_value(ds.inputs) << "]\n";
    std::cout << "nothing written; the dataset is regenerated from seed " << c.dataset_seed << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& c) {
    Dataset ds = make_synthetic_dataset(c.dataset_seed, c.classes, c.per_class, c.shape);
    fs::create_directories(c.out_dir + "/models");
    for (const ModelConfig& mc : c.models) {
        Model model = build_model(mc.arch, mc.seed);
        model.name = mc.name;
        TrainConfig tc = c.train;
        tc.seed = derive_seed(c.train.seed, model.identity());
        TrainResult result = train_model(model, ds, tc);
        save_model(model, model_path(c, mc.name));
        std::cout << mc.name << ": eval accuracy " << result.eval_accuracy << ", saved to "
                  << model_path(c, mc.name) << "\n";
    }
    return 0;
}

int cmd_attack(const ExperimentConfig& c) {
    Dataset ds = make_synthetic_dataset(c.dataset_seed, c.classes, c.per_class, c.shape);
    std::map<std::string, Model> zoo = load_zoo(c);
    const AttackSpec spec = c.attack_spec();
    const int workers = effective_workers(c);
    fs::create_directories(c.out_dir + "/adv");

    for (const auto& group : c.sources) {
        EnsembleSpec ensemble = make_ensemble(c, zoo, group);
        std::vector<const Model*> members;
        for (const EnsembleMember& m : ensemble.members) members.push_back(m.model);
        std::vector<int> indices = select_correct(members, ds);
        if (static_cast<int>(indices.size()) > c.eval_count)
            indices.resize(static_cast<std::size_t>(c.eval_count));

        AttackSpec seeded = spec;
        seeded.master_seed = c.seeds.front();
        Tensor adv = attack_batch(ensemble, ds, indices, seeded, workers);
        const std::string label = ensemble.label();
        const std::string base = c.out_dir + "/adv/" + label;
        save_tensor(adv, base + ".tensor");

        json meta;
        meta["tool"] = kToolName;
        meta["version"] = kToolVersion;
        meta["kind"] = "adversarial-batch";
        meta["source"] = label;
        meta["indices"] = indices;
        meta["labels"] = ds.gather_labels(indices);
        meta["master_seed"] = seeded.master_seed;
        meta["config"] = c.resolved();
        std::ofstream os(base + ".json", std::ios::binary);
        if (!os) throw IoError("cannot open for writing: " + base + ".json");
        os << meta.dump(2) << "\n";

        if (c.image_dump_count > 0) {
            const int n = std::min<int>(c.image_dump_count, static_cast<int>(indices.size()));
            std::vector<int> head(indices.begin(), indices.begin() + n);
            Tensor clean = ds.gather(head);
            Shape slice_shape = adv.shape();
            slice_shape[0] = n;
            Tensor adv_head(slice_shape, adv.a().head(shape_numel(slice_shape)));
            dump_images(clean, adv_head, base);
        }
        std::cout << label << ": " << indices.size() << " adversarial examples -> " << base << ".tensor\n";
    }
    return 0;
}

int cmd_evaluate(const ExperimentConfig& c) {
    Dataset ds = make_synthetic_dataset(c.dataset_seed, c.classes, c.per_class, c.shape);
    std::map<std::string, Model> zoo = load_zoo(c);
    TransferOptions options;
    options.eval_count = c.eval_count;
    options.workers = effective_workers(c);
    options.seeds = c.seeds;
    TransferReport report = transfer_matrix(make_sources(c, zoo), make_targets(c, zoo), ds,
                                            c.attack_spec(), options, c.resolved());
    fs::create_directories(c.out_dir);
    if (c.emit_json) write_report(report, c.out_dir + "/report.json", ReportFormat::Json);
    if (c.emit_csv) write_report(report, c.out_dir + "/report.csv", ReportFormat::Csv);
    write_timing(report, c.out_dir + "/report.timing.json");
    for (std::size_t s = 0; s < report.sources.size(); ++s) {
        std::cout << report.sources[s] << ":";
        for (std::size_t t = 0; t < report.targets.size(); ++t)
            std::cout << " " << report.targets[t] << (report.white_box[s][t] ? "*" : "") << "="
                      << report.matrix[s][t];
        std::cout << "\n";
    }
    std::cout << "report written to " << c.out_dir << "/report.{json,csv}\n";
    return 0;
}

int cmd_sweep(const ExperimentConfig& c) {
    Dataset ds = make_synthetic_dataset(c.dataset_seed, c.classes, c.per_class, c.shape);
    std::map<std::string, Model> zoo = load_zoo(c);
    TransferOptions options;
    options.eval_count = c.eval_count;
    options.workers = effective_workers(c);
    options.seeds = c.seeds;
    SweepResult result = sweep_erosion_param(make_sources(c, zoo), make_targets(c, zoo), ds,
                                             c.attack_spec(), c.sweep_param, c.sweep_grid, options,
                                             c.sweep_loss_draws, c.resolved());
    fs::create_directories(c.out_dir);
    if (c.emit_json) write_report(result, c.out_dir + "/sweep.json", ReportFormat::Json);
    if (c.emit_csv) write_report(result, c.out_dir + "/sweep.csv", ReportFormat::Csv);
    for (const SweepPoint& p : result.points)
        std::cout << result.param << "=" << p.value << ": black-box " << p.mean_black_box
                  << ", white-box " << p.mean_white_box << "\n";
    std::cout << "sweep written to " << c.out_dir << "/sweep.{json,csv}\n";
    return 0;
}

int cmd_report(const ExperimentConfig& c, const std::string& input, const std::string& format) {
    const std::string in = input.empty() ? c.out_dir + "/report.json" : input;
    if (!fs::exists(in))
        throw LoadError("missing stored result " + in + "; run 'erode evaluate' or 'erode sweep' first");
    const ReportFormat fmt = format == "json" ? ReportFormat::Json : ReportFormat::Csv;
    const std::string stem = in.substr(0, in.rfind('.'));
    const std::string out = stem + "." + format;
    json j;
    {
        std::ifstream is(in);
        is >> j;
    }
    if (j.value("kind", "") == "sweep")
        write_report(read_sweep_result(in), out, fmt);
    else
        write_report(read_transfer_report(in), out, fmt);
    std::cout << "rendered " << in << " -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"network-erosion adversarial transferability workbench"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    std::map<std::string, CommonFlags> flags;
    const std::vector<std::string> verbs{"gen-data", "train", "attack", "evaluate", "sweep", "report"};
    std::map<std::string, CLI::App*> cmds;
    for (const std::string& v : verbs) {
        CLI::App* cmd = app.add_subcommand(v);
        add_common(cmd, flags[v]);
        cmds[v] = cmd;
    }
    cmds["gen-data"]->description("validate dataset generation and print statistics");
    cmds["train"]->description("train the model zoo and write model files");
    cmds["attack"]->description("generate adversarial batches for the configured sources");
    cmds["evaluate"]->description("compute the source x target transfer matrix");
    cmds["sweep"]->description("rerun the transfer experiment over an erosion parameter grid");
    cmds["report"]->description("render a stored result to csv or json");

    std::string report_in;
    std::string report_format = "csv";
    cmds["report"]->add_option("--in", report_in, "stored report/sweep JSON to render");
    cmds["report"]->add_option("--format", report_format, "output format (csv|json)")
        ->check(CLI::IsMember({"csv", "json"}));

    CLI11_PARSE(app, argc, argv);

    try {
        for (const std::string& v : verbs) {
            if (!cmds[v]->parsed()) continue;
            ExperimentConfig c = load_config(flags[v]);
            if (v == "gen-data") return cmd_gen_data(c);
            if (v == "train") return cmd_train(c);
            if (v == "attack") return cmd_attack(c);
            if (v == "evaluate") return cmd_evaluate(c);
            if (v == "sweep") return cmd_sweep(c);
            if (v == "report") return cmd_report(c, report_in, report_format);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
