#include "erode/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <thread>

#include "erode/rng.hpp"
#include "erode/version.hpp"

namespace erode {

namespace {

// Runs fn(i) for i in [0, n) across `workers` threads. Work items write to
// disjoint slots, so the schedule cannot change results.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    workers = std::min(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

double wall_seconds(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string format_rate(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

std::vector<int> select_correct(const std::vector<const Model*>& models, const Dataset& data) {
    if (models.empty()) throw ConfigError("select_correct: no models given");
    std::vector<int> selected = data.eval_indices;
    for (const Model* m : models) {
        if (selected.empty()) break;
        Tensor batch = data.gather(selected);
        std::vector<int> labels = data.gather_labels(selected);
        std::vector<int> pred = predict_labels(*m, batch);
        std::vector<int> keep;
        keep.reserve(selected.size());
        for (std::size_t i = 0; i < selected.size(); ++i)
            if (pred[i] == labels[i]) keep.push_back(selected[i]);
        selected = std::move(keep);
    }
    if (selected.empty())
        throw SelectionError("select_correct: no eval example is classified correctly by every model");
    return selected;
}

Tensor attack_batch(const EnsembleSpec& ensemble, const Dataset& data, const std::vector<int>& indices,
                    const AttackSpec& spec, int workers) {
    ensemble.validate();
    spec.validate();
    if (indices.empty()) throw SelectionError("attack_batch: empty index set");

    Shape out_shape = data.example_shape;
    out_shape.insert(out_shape.begin(), static_cast<int>(indices.size()));
    Tensor out(out_shape);
    const std::int64_t stride = shape_numel(data.example_shape);

    parallel_for(static_cast<int>(indices.size()), workers, [&](int i) {
        const int idx = indices[static_cast<std::size_t>(i)];
        Tensor x(data.example_shape,
                 data.inputs.a().segment(static_cast<Eigen::Index>(idx) * stride, stride));
        AttackSpec per_example = spec;
        per_example.master_seed = derive_seed(spec.master_seed, static_cast<std::uint64_t>(idx));
        Tensor adv = run_attack(ensemble, x, data.labels[static_cast<std::size_t>(idx)], per_example);
        out.a().segment(static_cast<Eigen::Index>(i) * stride, stride) = adv.a();
    });
    return out;
}

double success_rate(const Model& target, const Tensor& adv_batch, const std::vector<int>& labels) {
    if (adv_batch.dim(0) == 0 || labels.empty()) throw ConfigError("success_rate: empty batch");
    std::vector<int> pred = predict_labels(target, adv_batch);
    if (pred.size() != labels.size())
        throw DimensionError("success_rate: label count does not match batch");
    int fooled = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) fooled += pred[i] != labels[i];
    return static_cast<double>(fooled) / static_cast<double>(pred.size());
}

TransferReport transfer_matrix(const std::vector<EnsembleSpec>& sources,
                               const std::vector<const Model*>& targets, const Dataset& data,
                               const AttackSpec& spec, const TransferOptions& options,
                               json config_snapshot) {
    if (sources.empty() || targets.empty())
        throw ConfigError("transfer_matrix: needs at least one source and one target");
    if (options.seeds.empty()) throw ConfigError("transfer_matrix: needs at least one seed");

    TransferReport report;
    report.seeds = options.seeds;
    report.eval_count = options.eval_count;
    report.config_snapshot = std::move(config_snapshot);
    for (const Model* t : targets) report.targets.push_back(t->name);

    for (const EnsembleSpec& source : sources) {
        std::vector<const Model*> members;
        for (const EnsembleMember& m : source.members) members.push_back(m.model);

        std::vector<int> indices = select_correct(members, data);
        if (static_cast<int>(indices.size()) > options.eval_count)
            indices.resize(static_cast<std::size_t>(options.eval_count));
        std::vector<int> labels = data.gather_labels(indices);

        std::vector<double> row(targets.size(), 0.0);
        double attack_time = 0.0;
        for (std::uint64_t seed : options.seeds) {
            AttackSpec seeded = spec;
            seeded.master_seed = seed;
            const auto t0 = std::chrono::steady_clock::now();
            Tensor adv = attack_batch(source, data, indices, seeded, options.workers);
            attack_time += wall_seconds(t0);
            for (std::size_t t = 0; t < targets.size(); ++t)
                row[t] += success_rate(*targets[t], adv, labels);
        }
        for (double& r : row) r /= static_cast<double>(options.seeds.size());

        std::vector<bool> wb(targets.size(), false);
        for (std::size_t t = 0; t < targets.size(); ++t)
            for (const Model* m : members)
                if (m == targets[t] || (m->name == targets[t]->name && m->identity() == targets[t]->identity()))
                    wb[t] = true;

        report.sources.push_back(source.label());
        report.matrix.push_back(std::move(row));
        report.white_box.push_back(std::move(wb));
        report.wall_time_s.push_back(attack_time);
    }
    return report;
}

SweepResult sweep_erosion_param(const std::vector<EnsembleSpec>& sources,
                                const std::vector<const Model*>& targets, const Dataset& data,
                                const AttackSpec& spec, const std::string& param,
                                const std::vector<double>& grid, const TransferOptions& options,
                                int loss_draws, json config_snapshot) {
    if (param != "lambda_u" && param != "lambda_b" && param != "gamma")
        throw ConfigError("sweep: unknown parameter '" + param + "'");
    if (grid.empty()) throw ConfigError("sweep: empty grid");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1])) throw ConfigError("sweep: grid must be strictly increasing");

    SweepResult result;
    result.param = param;
    result.seeds = options.seeds;
    result.config_snapshot = std::move(config_snapshot);

    for (double value : grid) {
        std::vector<EnsembleSpec> adjusted = sources;
        for (EnsembleSpec& s : adjusted)
            for (EnsembleMember& m : s.members) {
                if (param == "lambda_u")
                    m.erosion.lambda_u = value;
                else if (param == "lambda_b")
                    m.erosion.lambda_b = value;
                else
                    m.erosion.gamma = value;
                m.erosion.validate();  // out-of-range grid values fail here
            }

        TransferReport rep = transfer_matrix(adjusted, targets, data, spec, options);

        SweepPoint point;
        point.value = value;
        double wb_sum = 0.0, bb_sum = 0.0;
        int wb_n = 0, bb_n = 0;
        for (std::size_t s = 0; s < rep.matrix.size(); ++s)
            for (std::size_t t = 0; t < rep.matrix[s].size(); ++t) {
                if (rep.white_box[s][t]) {
                    wb_sum += rep.matrix[s][t];
                    ++wb_n;
                } else {
                    bb_sum += rep.matrix[s][t];
                    ++bb_n;
                }
            }
        point.mean_white_box = wb_n ? wb_sum / wb_n : 0.0;
        point.mean_black_box = bb_n ? bb_sum / bb_n : 0.0;

        if (param == "lambda_u" && loss_draws > 0) {
            double loss_sum = 0.0;
            int loss_n = 0;
            for (const EnsembleSpec& s : adjusted)
                for (const EnsembleMember& m : s.members) {
                    auto curve = clean_loss_curve(*m.model, data, {value}, loss_draws,
                                                  options.seeds.front(), options.workers);
                    loss_sum += curve.front().second;
                    ++loss_n;
                }
            point.mean_clean_loss = loss_n ? loss_sum / loss_n : 0.0;
            point.has_clean_loss = true;
        }
        result.points.push_back(point);
    }
    return result;
}

std::vector<std::pair<double, double>> clean_loss_curve(const Model& model, const Dataset& data,
                                                        const std::vector<double>& grid, int draws,
                                                        std::uint64_t seed, int workers) {
    if (draws < 1) throw ConfigError("clean_loss_curve: draws must be >= 1");
    Tensor batch = data.gather(data.eval_indices);
    std::vector<int> labels = data.gather_labels(data.eval_indices);

    ErosionSpec spec;
    spec.seed = seed;
    if (model.spec.family == Family::Residual) {
        spec.mode = ErosionMode::DsneResidual;
        spec.gamma = 1.0;
    } else {
        spec.mode = ErosionMode::DsnePlain;
        spec.lambda_b = 0.0;
    }

    std::vector<std::pair<double, double>> curve;
    for (double lu : grid) {
        ErosionSpec point_spec = spec;
        point_spec.lambda_u = lu;
        point_spec.validate();
        std::vector<double> losses(static_cast<std::size_t>(draws), 0.0);
        parallel_for(draws, workers, [&](int t) {
            ErosionSample sample = sample_erosion(point_spec, model, t);
            Tensor logits = eroded_forward(model, sample, batch);
            losses[static_cast<std::size_t>(t)] = cross_entropy_from_logits(logits, labels)[0];
        });
        double total = 0.0;
        for (double l : losses) total += l;
        curve.emplace_back(lu, total / draws);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json report_header(const char* kind) {
    json j;
    j["tool"] = kToolName;
    j["version"] = kToolVersion;
    j["kind"] = kind;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << text;
    if (!os) throw IoError("write failed: " + path);
}

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw LoadError("cannot parse " + path + ": " + e.what());
    }
    return j;
}

}  // namespace

void write_report(const TransferReport& report, const std::string& path, ReportFormat format) {
    if (format == ReportFormat::Json) {
        json j = report_header("transfer");
        j["eval_count"] = report.eval_count;
        j["seeds"] = report.seeds;
        j["sources"] = report.sources;
        j["targets"] = report.targets;
        j["matrix"] = report.matrix;
        j["white_box"] = report.white_box;
        j["config"] = report.config_snapshot;
        write_text(path, j.dump(2) + "\n");
        return;
    }
    std::string csv = "source";
    for (const std::string& t : report.targets) csv += "," + t;
    csv += "\n";
    for (std::size_t s = 0; s < report.sources.size(); ++s) {
        csv += report.sources[s];
        for (double v : report.matrix[s]) csv += "," + format_rate(v);
        csv += "\n";
    }
    write_text(path, csv);
}

void write_report(const SweepResult& result, const std::string& path, ReportFormat format) {
    if (format == ReportFormat::Json) {
        json j = report_header("sweep");
        j["param"] = result.param;
        j["seeds"] = result.seeds;
        json points = json::array();
        for (const SweepPoint& p : result.points) {
            json pj;
            pj["value"] = p.value;
            pj["mean_black_box"] = p.mean_black_box;
            pj["mean_white_box"] = p.mean_white_box;
            if (p.has_clean_loss) pj["mean_clean_loss"] = p.mean_clean_loss;
            points.push_back(pj);
        }
        j["points"] = points;
        j["config"] = result.config_snapshot;
        write_text(path, j.dump(2) + "\n");
        return;
    }
    std::string csv = "value,mean_black_box,mean_white_box,mean_clean_loss\n";
    for (const SweepPoint& p : result.points) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%.6g,%s,%s,", p.value, format_rate(p.mean_black_box).c_str(),
                      format_rate(p.mean_white_box).c_str());
        csv += buf;
        if (p.has_clean_loss) {
            std::snprintf(buf, sizeof(buf), "%.6f", p.mean_clean_loss);
            csv += buf;
        }
        csv += "\n";
    }
    write_text(path, csv);
}

TransferReport read_transfer_report(const std::string& path) {
    json j = load_json(path);
    if (j.value("kind", "") != std::string("transfer"))
        throw LoadError(path + " is not a transfer report");
    TransferReport r;
    r.eval_count = j.at("eval_count").get<int>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.sources = j.at("sources").get<std::vector<std::string>>();
    r.targets = j.at("targets").get<std::vector<std::string>>();
    r.matrix = j.at("matrix").get<std::vector<std::vector<double>>>();
    r.white_box = j.at("white_box").get<std::vector<std::vector<bool>>>();
    r.config_snapshot = j.value("config", json::object());
    return r;
}

SweepResult read_sweep_result(const std::string& path) {
    json j = load_json(path);
    if (j.value("kind", "") != std::string("sweep")) throw LoadError(path + " is not a sweep result");
    SweepResult r;
    r.param = j.at("param").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const json& pj : j.at("points")) {
        SweepPoint p;
        p.value = pj.at("value").get<double>();
        p.mean_black_box = pj.at("mean_black_box").get<double>();
        p.mean_white_box = pj.at("mean_white_box").get<double>();
        if (pj.contains("mean_clean_loss")) {
            p.mean_clean_loss = pj.at("mean_clean_loss").get<double>();
            p.has_clean_loss = true;
        }
        r.points.push_back(p);
    }
    r.config_snapshot = j.value("config", json::object());
    return r;
}

void write_timing(const TransferReport& report, const std::string& path) {
    json j = report_header("timing");
    json times = json::object();
    for (std::size_t s = 0; s < report.sources.size(); ++s)
        times[report.sources[s]] = report.wall_time_s[s];
    j["attack_wall_time_s"] = times;
    write_text(path, j.dump(2) + "\n");
}

}  // namespace erode
