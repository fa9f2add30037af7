#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "refgame/error.hpp"
#include "refgame/harness.hpp"

namespace refgame::harness {

using nlohmann::json;

namespace {

const char* const kDriftColumns[] = {"log_p_m", "log_p_m_given_i", "overlap1", "overlap3"};

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

// Runs jobs [0, n) on up to `workers` threads. Each job writes only its own
// slot, so results do not depend on scheduling.
void parallel_for(int workers, size_t n, const std::function<void(size_t)>& job) {
    std::atomic<size_t> next{0};
    auto run = [&] {
        for (size_t i = next++; i < n; i = next++) job(i);
    };
    const int threads = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    if (threads == 1) {
        run();
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
}

Cell make_cell(std::vector<double> values, std::vector<std::string> provenance) {
    Cell c;
    c.values = std::move(values);
    c.provenance = std::move(provenance);
    const double n = static_cast<double>(c.values.size());
    if (c.values.empty()) return c;
    for (double v : c.values) c.mean += v;
    c.mean /= n;
    if (c.values.size() > 1) {
        double ss = 0.0;
        for (double v : c.values) ss += (v - c.mean) * (v - c.mean);
        c.std = std::sqrt(ss / (n - 1.0));
    }
    return c;
}

double drift_value(const drift::DriftReport& r, const std::string& column) {
    if (column == "log_p_m") return r.log_p_m;
    if (column == "log_p_m_given_i") return r.log_p_m_given_i;
    if (column == "overlap1") return r.overlap1;
    return r.overlap3;
}

struct Job {
    const RegimeSpec* regime;
    uint64_t seed;
};

std::vector<Job> jobs_for(const ExperimentConfig& c) {
    std::vector<Job> jobs;
    for (const auto& r : c.regimes)
        for (uint64_t s : c.seeds) jobs.push_back({&r, s});
    return jobs;
}

ResultTable run_cells(const ExperimentConfig& c, const Dataset& data, const Pretrained& pre,
                      bool train, const Progress& progress) {
    const auto jobs = jobs_for(c);
    std::vector<std::optional<CellResult>> results(jobs.size());
    std::vector<std::string> errors(jobs.size());
    std::mutex log_mutex;
    parallel_for(c.workers, jobs.size(), [&](size_t i) {
        const Job& job = jobs[i];
        try {
            const PhaseResult phase = train ? train_cell(c, data, pre, *job.regime, job.seed)
                                            : load_cell(c, *job.regime, job.seed);
            results[i] = evaluate_cell(c, data, pre, *job.regime, job.seed, phase);
        } catch (const Error& e) {
            errors[i] = std::string(error_code_name(e.code())) + ": " + e.what();
        }
        if (progress) {
            std::lock_guard<std::mutex> lock(log_mutex);
            progress(job.regime->name + " seed " + std::to_string(job.seed) +
                     (errors[i].empty() ? " done" : " failed (" + errors[i] + ")"));
        }
    });
    std::vector<CellResult> cells;
    std::map<std::string, std::string> failures;
    for (size_t i = 0; i < jobs.size(); ++i) {
        if (results[i]) cells.push_back(std::move(*results[i]));
        else if (!failures.count(jobs[i].regime->name)) failures[jobs[i].regime->name] = errors[i];
    }
    ResultTable table = aggregate(c, cells, failures);
    apply_human_exports(c, table);
    const Layout l{c.out};
    table.write(l.tables() / "results.csv", l.tables() / "results_provenance.jsonl");
    std::ofstream d(l.tables() / "drift.csv", std::ios::trunc);
    d << drift::report_csv_header() << '\n';
    for (const auto& r : drift_rows(c, table)) d << drift::report_csv_row(r) << '\n';
    return table;
}

}  // namespace

double median(std::vector<double> v) {
    require(!v.empty(), ErrorCode::invalid_argument, "median of an empty list");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::string> result_columns(const ExperimentConfig& c) {
    std::vector<std::string> cols;
    for (const auto& s : c.splits) {
        cols.push_back(s + "/joint");
        cols.push_back(s + "/fixed");
    }
    cols.push_back("difficult/human");
    for (const char* d : kDriftColumns) cols.push_back(d);
    return cols;
}

ResultTable aggregate(const ExperimentConfig& c, const std::vector<CellResult>& cells,
                      const std::map<std::string, std::string>& failures) {
    ResultTable t;
    t.columns = result_columns(c);
    for (const auto& regime : c.regimes) {
        ResultRow row;
        row.regime = regime.name;
        if (auto f = failures.find(regime.name); f != failures.end()) {
            row.status = f->second;
            t.rows.push_back(std::move(row));
            continue;
        }
        std::vector<const CellResult*> mine;
        for (uint64_t seed : c.seeds)
            for (const auto& cell : cells)
                if (cell.regime == regime.name && cell.seed == seed) mine.push_back(&cell);
        for (const auto& col : t.columns) {
            std::vector<double> values;
            std::vector<std::string> prov;
            const bool is_drift = std::find(std::begin(kDriftColumns), std::end(kDriftColumns), col) !=
                                  std::end(kDriftColumns);
            // Without annotator data the human column is the fixed listener proxy.
            const std::string source = col == "difficult/human" ? "difficult/fixed" : col;
            for (const CellResult* cell : mine) {
                if (is_drift) {
                    if (!cell->records.count("drift")) continue;
                    values.push_back(drift_value(cell->drift, col));
                    prov.push_back(cell->records.at("drift").generic_string());
                } else if (cell->values.count(source)) {
                    values.push_back(cell->values.at(source));
                    prov.push_back(cell->records.at(source).generic_string());
                }
            }
            if (!values.empty()) row.cells[col] = make_cell(std::move(values), std::move(prov));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

const ResultRow& ResultTable::row(const std::string& regime) const {
    for (const auto& r : rows)
        if (r.regime == regime) return r;
    fail(ErrorCode::not_found, "no row for regime '" + regime + "'");
}

void ResultTable::write(const fs::path& csv, const fs::path& provenance) const {
    fs::create_directories(csv.parent_path());
    std::ofstream out(csv, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + csv.string());
    out << "regime,status,human_source,seeds";
    for (const auto& c : columns) out << ',' << c << "_mean," << c << "_std";
    out << '\n';
    std::ofstream prov(provenance, std::ios::trunc);
    for (const auto& r : rows) {
        size_t seeds = 0;
        for (const auto& [name, cell] : r.cells) seeds = std::max(seeds, cell.values.size());
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        out << r.regime << ',' << status << ',' << r.human_source << ',' << seeds;
        for (const auto& c : columns) {
            auto it = r.cells.find(c);
            if (it == r.cells.end()) {
                out << ",,";
                continue;
            }
            out << ',' << fmt(it->second.mean) << ',' << fmt(it->second.std);
            prov << json{{"regime", r.regime},
                         {"column", c},
                         {"values", it->second.values},
                         {"records", it->second.provenance}}
                        .dump()
                 << '\n';
        }
        out << '\n';
    }
}

void apply_human_exports(const ExperimentConfig& c, ResultTable& table) {
    const Layout l{c.out};
    for (auto& row : table.rows) {
        const fs::path file = l.human() / (row.regime + ".jsonl");
        if (!fs::exists(file)) continue;
        row.cells["difficult/human"] =
            make_cell({reaggregate(file)}, {fs::relative(file, l.root).generic_string()});
        row.human_source = "annotators";
    }
}

ResultTable run_matrix(const ExperimentConfig& c, const Dataset& data, const Pretrained& pre,
                       const Progress& progress) {
    return run_cells(c, data, pre, true, progress);
}

ResultTable evaluate_matrix(const ExperimentConfig& c, const Dataset& data, const Pretrained& pre,
                            const Progress& progress) {
    return run_cells(c, data, pre, false, progress);
}

std::vector<drift::DriftReport> drift_rows(const ExperimentConfig& c, const ResultTable& table) {
    std::vector<drift::DriftReport> out;
    const std::string split = std::find(c.splits.begin(), c.splits.end(), "difficult") != c.splits.end()
                                  ? "difficult"
                                  : c.splits.back();
    for (const auto& row : table.rows) {
        if (row.status != "ok" || !row.cells.count("log_p_m")) continue;
        auto mean = [&](const std::string& col) {
            auto it = row.cells.find(col);
            return it == row.cells.end() ? 0.0 : it->second.mean;
        };
        drift::DriftReport r;
        r.speaker = row.regime;
        r.log_p_m = mean("log_p_m");
        r.log_p_m_given_i = mean("log_p_m_given_i");
        r.overlap1 = mean("overlap1");
        r.overlap3 = mean("overlap3");
        r.joint_accuracy = mean(split + "/joint");
        r.reference_accuracy = mean(split == "difficult" ? "difficult/human" : split + "/fixed");
        r.gap = r.joint_accuracy - r.reference_accuracy;
        out.push_back(r);
    }
    return out;
}

// ---- pragmatic ablation -------------------------------------------------------------------------

std::vector<AblationRow> run_pragmatic_ablation(const ExperimentConfig& c, const Dataset& data,
                                                const Pretrained& pre, const Progress& progress) {
    require(!c.ablation.sets.empty(), ErrorCode::invalid_argument, "ablation needs at least one unfreeze set");
    const auto& inst = split_instances(data, c.ablation.split);
    std::vector<RegimeSpec> specs;
    for (auto set : c.ablation.sets) {
        RegimeSpec r;
        r.name = std::string("ablation_") + training::unfreeze_name(set);
        r.variant = agents::SpeakerVariant::poe_reranker;
        r.training = c.training;
        r.training.episodes = c.ablation.episodes;
        r.training.listener = agents::ListenerRegime::joint;
        r.training.unfreeze = set;
        r.training.rerank.gold_candidates = true;
        specs.push_back(std::move(r));
    }
    struct Outcome {
        double joint = 0.0, fixed = 0.0;
    };
    const size_t n = specs.size() * c.seeds.size();
    std::vector<Outcome> outcomes(n);
    std::mutex log_mutex;
    parallel_for(c.workers, n, [&](size_t i) {
        const RegimeSpec& spec = specs[i / c.seeds.size()];
        const uint64_t seed = c.seeds[i % c.seeds.size()];
        const PhaseResult phase = train_cell(c, data, pre, spec, seed);
        const fs::path dir = Layout{c.out}.cell(spec.name, seed) / "records";
        const uint64_t eval_seed = Rng::mix(seed ^ Rng::mix(nn::fnv1a(c.ablation.split)));
        const Evaluation joint = evaluate(phase.speaker, phase.listener, data, inst, eval_seed, spec.name);
        const Evaluation fixed = evaluate(phase.speaker, *pre.fixed_listener, data, inst, eval_seed, spec.name);
        write_records(dir / (c.ablation.split + "_joint.jsonl"), joint.records);
        write_records(dir / (c.ablation.split + "_fixed.jsonl"), fixed.records);
        outcomes[i] = {joint.accuracy, fixed.accuracy};
        if (progress) {
            std::lock_guard<std::mutex> lock(log_mutex);
            progress(spec.name + " seed " + std::to_string(seed) + ": joint " + fmt(joint.accuracy) +
                     " fixed " + fmt(fixed.accuracy));
        }
    });
    std::vector<AblationRow> rows;
    for (size_t k = 0; k < specs.size(); ++k) {
        AblationRow row;
        row.set = c.ablation.sets[k];
        for (size_t s = 0; s < c.seeds.size(); ++s) {
            const Outcome& o = outcomes[k * c.seeds.size() + s];
            row.joint.push_back(o.joint);
            row.fixed.push_back(o.fixed);
            row.delta.push_back(drift::pragmatic_gap(o.joint, o.fixed));
        }
        row.joint_median = median(row.joint);
        row.fixed_median = median(row.fixed);
        row.delta_median = median(row.delta);
        rows.push_back(std::move(row));
    }
    write_ablation(Layout{c.out}.tables() / "ablation.csv", rows);
    return rows;
}

void write_ablation(const fs::path& csv, const std::vector<AblationRow>& rows) {
    fs::create_directories(csv.parent_path());
    std::ofstream out(csv, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + csv.string());
    out << "unfreeze,joint_median,fixed_median,delta_median,joint_per_seed,fixed_per_seed\n";
    for (const auto& r : rows) {
        auto join = [](const std::vector<double>& v) {
            std::string s;
            for (size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt(v[i]);
            return s;
        };
        out << training::unfreeze_name(r.set) << ',' << fmt(r.joint_median) << ',' << fmt(r.fixed_median)
            << ',' << fmt(r.delta_median) << ',' << join(r.joint) << ',' << join(r.fixed) << '\n';
    }
}

}  // namespace refgame::harness
