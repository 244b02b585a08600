#include "erode/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace erode {

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& item : j.items())
        if (!allowed.count(item.key()))
            throw ConfigError("config: unknown key '" + where + "." + item.key() + "'");
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config: '" + where + "." + key + "' has the wrong type");
    }
}

Family family_from_name(const std::string& s) {
    if (s == "plain") return Family::Plain;
    if (s == "residual") return Family::Residual;
    throw ConfigError("config: unknown family '" + s + "' (expected plain|residual)");
}

BlockKind kind_from_name(const std::string& s) {
    if (s == "dense") return BlockKind::Dense;
    if (s == "conv") return BlockKind::Conv;
    throw ConfigError("config: unknown block kind '" + s + "' (expected dense|conv)");
}

ModelConfig parse_model(const json& j, const std::string& where) {
    check_keys(j, {"name", "family", "kind", "blocks", "width", "seed", "kernel"}, where);
    ModelConfig m;
    read_field(j, "name", m.name, where);
    if (m.name.empty()) throw ConfigError("config: '" + where + "' needs a non-empty name");
    std::string family = "plain", kind = "dense";
    read_field(j, "family", family, where);
    read_field(j, "kind", kind, where);
    m.arch.family = family_from_name(family);
    m.arch.block_kind = kind_from_name(kind);
    read_field(j, "blocks", m.arch.block_count, where);
    read_field(j, "width", m.arch.width, where);
    read_field(j, "kernel", m.arch.kernel_size, where);
    read_field(j, "seed", m.seed, where);
    return m;
}

ErosionSpec parse_erosion(const json& j, const ErosionSpec& base, const std::string& where) {
    check_keys(j, {"mode", "lambda_u", "lambda_b", "gamma", "seed"}, where);
    ErosionSpec e = base;
    if (j.contains("mode")) {
        std::string mode;
        read_field(j, "mode", mode, where);
        e.mode = erosion_mode_from_name(mode);
    }
    read_field(j, "lambda_u", e.lambda_u, where);
    read_field(j, "lambda_b", e.lambda_b, where);
    read_field(j, "gamma", e.gamma, where);
    read_field(j, "seed", e.seed, where);
    return e;
}

// Paper-style defaults, re-tuned by sweep at desk scale: plain sources get
// the dropout stage, residual sources the shortcut bias stage; erosion
// magnitude shrinks as depth grows.
ErosionSpec default_erosion(const ModelConfig& m, int depth_rank) {
    ErosionSpec e;
    if (m.arch.family == Family::Residual) {
        e.mode = ErosionMode::DsneResidual;
        const double lu[] = {0.14, 0.12, 0.10};
        e.lambda_u = lu[std::min(depth_rank, 2)];
        e.gamma = 0.8;
    } else {
        e.mode = ErosionMode::DsnePlain;
        e.lambda_u = 0.10;
        const double lb[] = {0.002, 0.004, 0.006};
        e.lambda_b = lb[std::min(depth_rank, 2)];
    }
    return e;
}

}  // namespace

AttackSpec ExperimentConfig::attack_spec() const {
    AttackSpec s;
    s.epsilon = epsilon;
    s.iterations = iterations;
    s.step = alpha;
    s.mu = mu;
    s.use_momentum = momentum;
    if (ti_enabled) s.ti_kernel = make_ti_kernel(ti_size, ti_sigma);
    s.master_seed = master_seed;
    return s;
}

ErosionSpec ExperimentConfig::erosion_for(const std::string& model_name) const {
    auto it = erosion.find(model_name);
    if (it == erosion.end())
        throw ConfigError("config: no erosion settings for model '" + model_name + "'");
    return it->second;
}

const ModelConfig& ExperimentConfig::model_config(const std::string& name) const {
    for (const ModelConfig& m : models)
        if (m.name == name) return m;
    throw ConfigError("config: unknown model '" + name + "'");
}

void ExperimentConfig::validate() const {
    if (classes < 2) throw ConfigError("config: dataset.classes must be >= 2");
    if (per_class < 1) throw ConfigError("config: dataset.per_class must be >= 1");
    if (shape.size() != 3) throw ConfigError("config: dataset.shape must have three dims");
    for (int d : shape)
        if (d <= 0) throw ConfigError("config: dataset.shape has a degenerate dimension");

    if (models.empty()) throw ConfigError("config: zoo.models must not be empty");
    std::set<std::string> names;
    for (const ModelConfig& m : models) {
        m.arch.validate();
        if (!names.insert(m.name).second)
            throw ConfigError("config: duplicate model name '" + m.name + "'");
    }

    if (!(epsilon > 0.0)) throw ConfigError("config: attack.epsilon must be positive");
    if (iterations < 1) throw ConfigError("config: attack.iterations must be >= 1");
    if (alpha && !(*alpha > 0.0)) throw ConfigError("config: attack.alpha must be positive");
    if (!(mu >= 0.0)) throw ConfigError("config: attack.mu must be >= 0");
    if (ti_size < 1 || ti_size % 2 == 0) throw ConfigError("config: attack.ti.size must be odd");
    if (!(ti_sigma > 0.0)) throw ConfigError("config: attack.ti.sigma must be positive");

    for (const auto& [name, spec] : erosion) {
        if (!names.count(name)) throw ConfigError("config: attack.erosion names unknown model '" + name + "'");
        spec.validate();
        const ModelConfig& mc = model_config(name);
        if ((spec.mode == ErosionMode::GnSkip || spec.mode == ErosionMode::DsneResidual) &&
            mc.arch.family != Family::Residual)
            throw ConfigError("config: erosion mode '" + erosion_mode_name(spec.mode) + "' on model '" +
                              name + "' requires the residual family");
    }

    if (sources.empty()) throw ConfigError("config: harness.sources must not be empty");
    for (const auto& group : sources) {
        if (group.empty()) throw ConfigError("config: harness.sources contains an empty ensemble");
        for (const std::string& n : group)
            if (!names.count(n)) throw ConfigError("config: harness.sources names unknown model '" + n + "'");
    }
    if (targets.empty()) throw ConfigError("config: harness.targets must not be empty");
    for (const std::string& n : targets)
        if (!names.count(n)) throw ConfigError("config: harness.targets names unknown model '" + n + "'");
    if (eval_count < 1) throw ConfigError("config: harness.eval_count must be >= 1");
    if (seeds.empty()) throw ConfigError("config: harness.seeds must not be empty");
    if (workers < 0) throw ConfigError("config: harness.workers must be >= 0");
    if (image_dump_count < 0) throw ConfigError("config: harness.image_dump_count must be >= 0");

    if (sweep_param != "lambda_u" && sweep_param != "lambda_b" && sweep_param != "gamma")
        throw ConfigError("config: harness.sweep.param must be lambda_u|lambda_b|gamma");
    if (sweep_grid.empty()) throw ConfigError("config: harness.sweep.grid must not be empty");
    for (std::size_t i = 0; i < sweep_grid.size(); ++i) {
        const double v = sweep_grid[i];
        if (i && !(v > sweep_grid[i - 1]))
            throw ConfigError("config: harness.sweep.grid must be strictly increasing");
        const bool ok = sweep_param == "gamma" ? (v > 0.0 && v <= 1.0) : (v >= 0.0 && v < 1.0);
        if (!ok)
            throw ConfigError("config: harness.sweep.grid value " + std::to_string(v) +
                              " outside the legal range of " + sweep_param);
    }
    if (sweep_loss_draws < 0) throw ConfigError("config: harness.sweep.loss_draws must be >= 0");

    if (train.epochs < 0) throw ConfigError("config: zoo.train.epochs must be >= 0");
    if (train.batch_size < 1) throw ConfigError("config: zoo.train.batch_size must be >= 1");
    if (!(train.learning_rate > 0.0)) throw ConfigError("config: zoo.train.learning_rate must be positive");
    if (!(train.momentum >= 0.0 && train.momentum < 1.0))
        throw ConfigError("config: zoo.train.momentum must be in [0, 1)");
}

json ExperimentConfig::resolved() const {
    json j;
    j["dataset"] = {{"seed", dataset_seed}, {"classes", classes}, {"per_class", per_class}, {"shape", shape}};
    json jmodels = json::array();
    for (const ModelConfig& m : models) {
        json mj;
        mj["name"] = m.name;
        mj["family"] = family_name(m.arch.family);
        mj["kind"] = block_kind_name(m.arch.block_kind);
        mj["blocks"] = m.arch.block_count;
        mj["width"] = m.arch.width;
        if (m.arch.block_kind == BlockKind::Conv) mj["kernel"] = m.arch.kernel_size;
        mj["seed"] = m.seed;
        jmodels.push_back(mj);
    }
    j["zoo"] = {{"models", jmodels},
                {"train",
                 {{"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"learning_rate", train.learning_rate},
                  {"momentum", train.momentum},
                  {"seed", train.seed}}}};
    json jerosion = json::object();
    for (const auto& [name, e] : erosion)
        jerosion[name] = {{"mode", erosion_mode_name(e.mode)},
                          {"lambda_u", e.lambda_u},
                          {"lambda_b", e.lambda_b},
                          {"gamma", e.gamma},
                          {"seed", e.seed}};
    j["attack"] = {{"epsilon", epsilon},
                   {"iterations", iterations},
                   {"alpha", alpha ? *alpha : epsilon / iterations},
                   {"mu", mu},
                   {"momentum", momentum},
                   {"ti", {{"enabled", ti_enabled}, {"size", ti_size}, {"sigma", ti_sigma}}},
                   {"master_seed", master_seed},
                   {"erosion", jerosion}};
    j["harness"] = {{"sources", sources},
                    {"targets", targets},
                    {"eval_count", eval_count},
                    {"seeds", seeds},
                    {"out_dir", out_dir},
                    {"formats", [&] {
                         std::vector<std::string> f;
                         if (emit_csv) f.push_back("csv");
                         if (emit_json) f.push_back("json");
                         return f;
                     }()},
                    {"workers", workers},
                    {"image_dump_count", image_dump_count},
                    {"sweep",
                     {{"param", sweep_param}, {"grid", sweep_grid}, {"loss_draws", sweep_loss_draws}}}};
    return j;
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    auto add = [&c](const std::string& name, Family f, int blocks, int width, std::uint64_t seed) {
        ModelConfig m;
        m.name = name;
        m.arch.family = f;
        m.arch.block_kind = BlockKind::Dense;
        m.arch.block_count = blocks;
        m.arch.width = width;
        m.seed = seed;
        c.models.push_back(m);
    };
    // Sources: two families, three depths each. Targets: held-out models
    // trained with different seeds, depths and widths.
    add("plain3", Family::Plain, 3, 48, 101);
    add("plain5", Family::Plain, 5, 48, 102);
    add("plain7", Family::Plain, 7, 48, 103);
    add("res4", Family::Residual, 4, 48, 104);
    add("res6", Family::Residual, 6, 48, 105);
    add("res8", Family::Residual, 8, 48, 106);
    add("tplain4", Family::Plain, 4, 64, 201);
    add("tres5", Family::Residual, 5, 64, 202);
    add("tres7", Family::Residual, 7, 40, 203);
    for (ModelConfig& m : c.models) {
        m.arch.input_shape = c.shape;
        m.arch.class_count = c.classes;
    }

    c.train.epochs = 40;
    c.train.batch_size = 32;
    c.train.learning_rate = 0.05;
    c.train.momentum = 0.9;
    c.train.seed = 7;

    c.sources = {{"plain3"}, {"plain5"}, {"plain7"}, {"res4"}, {"res6"}, {"res8"}};
    c.targets = {"plain3", "plain5", "plain7", "res4", "res6", "res8", "tplain4", "tres5", "tres7"};

    // Depth-ranked erosion defaults per family.
    std::map<Family, std::vector<const ModelConfig*>> by_family;
    for (const auto& group : c.sources) {
        const ModelConfig& m = c.model_config(group.front());
        by_family[m.arch.family].push_back(&m);
    }
    for (auto& [family, list] : by_family) {
        std::sort(list.begin(), list.end(),
                  [](const ModelConfig* a, const ModelConfig* b) { return a->arch.block_count < b->arch.block_count; });
        for (std::size_t rank = 0; rank < list.size(); ++rank)
            c.erosion[list[rank]->name] = default_erosion(*list[rank], static_cast<int>(rank));
    }
    return c;
}

ExperimentConfig parse_config_json(const json& document, const json& overrides) {
    ExperimentConfig c = default_config();
    check_keys(document, {"dataset", "zoo", "attack", "harness"}, "config");

    if (document.contains("dataset")) {
        const json& d = document.at("dataset");
        check_keys(d, {"seed", "classes", "per_class", "shape"}, "dataset");
        read_field(d, "seed", c.dataset_seed, "dataset");
        read_field(d, "classes", c.classes, "dataset");
        read_field(d, "per_class", c.per_class, "dataset");
        read_field(d, "shape", c.shape, "dataset");
    }

    bool custom_models = false;
    if (document.contains("zoo")) {
        const json& z = document.at("zoo");
        check_keys(z, {"models", "train"}, "zoo");
        if (z.contains("models")) {
            if (!z.at("models").is_array()) throw ConfigError("config: zoo.models must be an array");
            c.models.clear();
            custom_models = true;
            int i = 0;
            for (const json& mj : z.at("models"))
                c.models.push_back(parse_model(mj, "zoo.models[" + std::to_string(i++) + "]"));
        }
        if (z.contains("train")) {
            const json& t = z.at("train");
            check_keys(t, {"epochs", "batch_size", "learning_rate", "momentum", "seed"}, "zoo.train");
            read_field(t, "epochs", c.train.epochs, "zoo.train");
            read_field(t, "batch_size", c.train.batch_size, "zoo.train");
            read_field(t, "learning_rate", c.train.learning_rate, "zoo.train");
            read_field(t, "momentum", c.train.momentum, "zoo.train");
            read_field(t, "seed", c.train.seed, "zoo.train");
        }
    }

    if (document.contains("harness")) {
        const json& h = document.at("harness");
        check_keys(h,
                   {"sources", "targets", "eval_count", "seeds", "out_dir", "formats", "workers",
                    "image_dump_count", "sweep"},
                   "harness");
        if (custom_models) {
            // A custom zoo invalidates the default wiring; require explicit lists.
            if (!h.contains("sources") || !h.contains("targets"))
                throw ConfigError("config: custom zoo.models requires harness.sources and harness.targets");
        }
        read_field(h, "sources", c.sources, "harness");
        read_field(h, "targets", c.targets, "harness");
        read_field(h, "eval_count", c.eval_count, "harness");
        read_field(h, "seeds", c.seeds, "harness");
        read_field(h, "out_dir", c.out_dir, "harness");
        if (h.contains("formats")) {
            std::vector<std::string> formats;
            read_field(h, "formats", formats, "harness");
            c.emit_csv = c.emit_json = false;
            for (const std::string& f : formats) {
                if (f == "csv")
                    c.emit_csv = true;
                else if (f == "json")
                    c.emit_json = true;
                else
                    throw ConfigError("config: harness.formats entry '" + f + "' must be csv|json");
            }
        }
        read_field(h, "workers", c.workers, "harness");
        read_field(h, "image_dump_count", c.image_dump_count, "harness");
        if (h.contains("sweep")) {
            const json& s = h.at("sweep");
            check_keys(s, {"param", "grid", "loss_draws"}, "harness.sweep");
            read_field(s, "param", c.sweep_param, "harness.sweep");
            read_field(s, "grid", c.sweep_grid, "harness.sweep");
            read_field(s, "loss_draws", c.sweep_loss_draws, "harness.sweep");
        }
    } else if (custom_models) {
        throw ConfigError("config: custom zoo.models requires harness.sources and harness.targets");
    }

    if (custom_models) {
        // Rebuild family-ranked erosion defaults for the custom zoo.
        c.erosion.clear();
        std::map<Family, std::vector<const ModelConfig*>> by_family;
        std::set<std::string> source_names;
        for (const auto& group : c.sources)
            for (const std::string& n : group) source_names.insert(n);
        for (const ModelConfig& m : c.models)
            if (source_names.count(m.name)) by_family[m.arch.family].push_back(&m);
        for (auto& [family, list] : by_family) {
            std::sort(list.begin(), list.end(), [](const ModelConfig* a, const ModelConfig* b) {
                return a->arch.block_count < b->arch.block_count;
            });
            for (std::size_t rank = 0; rank < list.size(); ++rank)
                c.erosion[list[rank]->name] = default_erosion(*list[rank], static_cast<int>(rank));
        }
    }

    if (document.contains("attack")) {
        const json& a = document.at("attack");
        check_keys(a, {"epsilon", "iterations", "alpha", "mu", "momentum", "ti", "master_seed", "erosion"},
                   "attack");
        read_field(a, "epsilon", c.epsilon, "attack");
        read_field(a, "iterations", c.iterations, "attack");
        if (a.contains("alpha") && !a.at("alpha").is_null()) {
            double v = 0.0;
            read_field(a, "alpha", v, "attack");
            c.alpha = v;
        }
        read_field(a, "mu", c.mu, "attack");
        read_field(a, "momentum", c.momentum, "attack");
        if (a.contains("ti")) {
            const json& t = a.at("ti");
            check_keys(t, {"enabled", "size", "sigma"}, "attack.ti");
            read_field(t, "enabled", c.ti_enabled, "attack.ti");
            read_field(t, "size", c.ti_size, "attack.ti");
            read_field(t, "sigma", c.ti_sigma, "attack.ti");
        }
        read_field(a, "master_seed", c.master_seed, "attack");
        if (a.contains("erosion")) {
            const json& e = a.at("erosion");
            if (!e.is_object()) throw ConfigError("config: attack.erosion must map model names to settings");
            for (const auto& item : e.items()) {
                ErosionSpec base;
                auto it = c.erosion.find(item.key());
                if (it != c.erosion.end()) base = it->second;
                c.erosion[item.key()] = parse_erosion(item.value(), base, "attack.erosion." + item.key());
            }
        }
    }

    // CLI flags win over the file.
    check_keys(overrides, {"epsilon", "iterations", "master_seed", "out_dir", "workers"}, "flags");
    read_field(overrides, "epsilon", c.epsilon, "flags");
    read_field(overrides, "iterations", c.iterations, "flags");
    read_field(overrides, "master_seed", c.master_seed, "flags");
    read_field(overrides, "out_dir", c.out_dir, "flags");
    read_field(overrides, "workers", c.workers, "flags");

    for (ModelConfig& m : c.models) {
        m.arch.input_shape = c.shape;
        m.arch.class_count = c.classes;
    }

    // Make every source model's erosion settings explicit in the resolved form.
    for (const auto& group : c.sources)
        for (const std::string& n : group)
            if (!c.erosion.count(n)) c.erosion[n] = default_erosion(c.model_config(n), 0);

    c.validate();
    return c;
}

ExperimentConfig parse_config_file(const std::string& path, const json& overrides) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    json document;
    try {
        is >> document;
    } catch (const std::exception& e) {
        throw ConfigError("config: cannot parse " + path + ": " + e.what());
    }
    return parse_config_json(document, overrides);
}

}  // namespace erode
