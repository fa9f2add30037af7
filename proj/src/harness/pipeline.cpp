#include <algorithm>
#include <cmath>
#include <fstream>

#include "refgame/error.hpp"
#include "refgame/harness.hpp"

namespace refgame::harness {

using nlohmann::json;

namespace {

uint64_t world_fingerprint(const ExperimentConfig& c) {
    const json j = config_to_json(c)["world"];
    return nn::fnv1a(j.dump());
}

uint64_t combine(uint64_t a, uint64_t b) { return Rng::mix(a ^ Rng::mix(b)); }

fs::path data_manifest(const Layout& l) { return l.root / "data" / "manifest.json"; }

void save_store(const nn::ParamStore& store, uint64_t fingerprint, uint64_t seed, const fs::path& path) {
    nn::CheckpointHeader h;
    h.fingerprint = fingerprint;
    h.seed = seed;
    nn::save_checkpoint(store, h, path);
}

std::optional<nn::ParamStore> load_if_present(const fs::path& path, uint64_t fingerprint) {
    if (!fs::exists(path)) return std::nullopt;
    return nn::load_checkpoint(path, fingerprint);
}

}  // namespace

// ---- data and pretraining ---------------------------------------------------------------

Dataset generate_data(const ExperimentConfig& c) {
    Dataset d = training::make_dataset(c.data, c.sizes);
    const Layout l{c.out};
    world::save_corpus(d.corpus, l.corpus());
    world::save_splits(d.splits, l.splits());
    std::ofstream(data_manifest(l), std::ios::trunc)
        << json{{"world_fingerprint", world_fingerprint(c)}}.dump() << '\n';
    return d;
}

Dataset load_data(const ExperimentConfig& c) {
    const Layout l{c.out};
    if (!fs::exists(l.corpus()) || !fs::exists(l.splits()))
        fail(ErrorCode::dependency, "no generated data under " + c.out.string() + "; run gen-data first");
    if (fs::exists(data_manifest(l))) {
        std::ifstream in(data_manifest(l));
        const json m = json::parse(in);
        require(m.at("world_fingerprint").get<uint64_t>() == world_fingerprint(c),
                ErrorCode::version_mismatch,
                "data under " + c.out.string() + " was generated from a different world configuration");
    }
    return training::assemble_dataset(world::load_corpus(l.corpus(), c.data.catalog),
                                      world::load_splits(l.splits()), c.sizes);
}

Pretrained pretrain_all(const ExperimentConfig& c, const Dataset& data, const Progress& progress) {
    const Layout l{c.out};
    const uint64_t fp = pretrain_fingerprint(c);
    training::MetricsLog log(l.pretrain_dir() / "metrics.csv");
    Pretrained pre;
    if (progress) progress("pretraining captioner");
    pre.captioner = training::pretrain_captioner(data, c.pretrain, combine(c.pretrain_seed, 1), &log);
    save_store(*pre.captioner, fp, c.pretrain_seed, l.captioner());
    if (progress) progress("pretraining language model");
    pre.language_model =
        training::pretrain_language_model(data, c.pretrain, combine(c.pretrain_seed, 2), &log);
    save_store(*pre.language_model, fp, c.pretrain_seed, l.language_model());
    if (progress) progress("pretraining fixed listener");
    pre.fixed_listener =
        training::pretrain_fixed_listener(data, c.pretrain, combine(c.pretrain_seed, 3), &log);
    save_store(*pre.fixed_listener, fp, c.pretrain_seed, l.fixed_listener());
    return pre;
}

Pretrained load_pretrained(const ExperimentConfig& c) {
    const Layout l{c.out};
    const uint64_t fp = pretrain_fingerprint(c);
    Pretrained pre;
    pre.captioner = load_if_present(l.captioner(), fp);
    pre.language_model = load_if_present(l.language_model(), fp);
    pre.fixed_listener = load_if_present(l.fixed_listener(), fp);
    return pre;
}

// ---- cells ----------------------------------------------------------------------------------

PhaseResult train_cell(const ExperimentConfig& c, const Dataset& data, const Pretrained& pre,
                       const RegimeSpec& regime, uint64_t seed) {
    const fs::path dir = Layout{c.out}.cell(regime.name, seed);
    fs::create_directories(dir);
    training::MetricsLog log(dir / "metrics.csv");
    PhaseResult res = training::run_phase(data, pre, regime.variant, regime.training,
                                          combine(seed, nn::fnv1a(regime.name)), &log);
    const uint64_t fp = regime_fingerprint(c, regime);
    save_store(res.speaker.params, fp, seed, dir / "speaker.ckpt");
    save_store(res.listener, fp, seed, dir / "listener.ckpt");
    return res;
}

PhaseResult load_cell(const ExperimentConfig& c, const RegimeSpec& regime, uint64_t seed) {
    const fs::path dir = Layout{c.out}.cell(regime.name, seed);
    if (!fs::exists(dir / "speaker.ckpt") || !fs::exists(dir / "listener.ckpt"))
        fail(ErrorCode::dependency, "regime '" + regime.name + "' seed " + std::to_string(seed) +
                                        " has not been trained; run train first");
    const uint64_t fp = regime_fingerprint(c, regime);
    PhaseResult res;
    res.speaker.variant = regime.variant;
    res.speaker.decoding = regime.training.decoding;
    res.speaker.rerank = regime.training.rerank;
    res.speaker.params = nn::load_checkpoint(dir / "speaker.ckpt", fp);
    res.listener = nn::load_checkpoint(dir / "listener.ckpt", fp);
    return res;
}

// ---- evaluation -------------------------------------------------------------------------------

const std::vector<world::ReferentialInstance>& split_instances(const Dataset& data,
                                                              const std::string& split) {
    if (split == "easy") return data.splits.easy;
    if (split == "difficult") return data.splits.difficult;
    fail(ErrorCode::invalid_argument, "unknown split '" + split + "'");
}

namespace {

Evaluation listen_all(const std::vector<agents::Message>& messages, const nn::ParamStore& listener,
                      const Dataset& data, const std::vector<world::ReferentialInstance>& instances,
                      const std::string& speaker_name) {
    Evaluation ev;
    ev.messages = messages;
    constexpr size_t kChunk = 64;
    long hits = 0;
    for (size_t start = 0; start < instances.size(); start += kChunk) {
        const size_t end = std::min(instances.size(), start + kChunk);
        const std::vector<world::ReferentialInstance> chunk(instances.begin() + static_cast<long>(start),
                                                            instances.begin() + static_cast<long>(end));
        std::vector<std::vector<int>> inputs;
        for (size_t i = start; i < end; ++i)
            inputs.push_back(messages[i].tokens.empty() ? std::vector<int>{agents::Vocabulary::kEos}
                                                        : messages[i].tokens);
        nn::Graph g(false);
        const nn::Tensor lp = agents::listener_log_probs(g, listener, inputs,
                                                         training::candidate_features(data, chunk))
                                  .value();
        for (size_t i = 0; i < chunk.size(); ++i) {
            const long row = static_cast<long>(i);
            RewardRecord r;
            r.instance_id = chunk[i].id;
            r.speaker = speaker_name;
            r.message = messages[start + i];
            std::vector<double> scores(static_cast<size_t>(lp.cols()));
            for (long k = 0; k < lp.cols(); ++k) scores[k] = lp(row, k);
            r.choice = agents::argmax_lowest(scores);
            r.target_index = chunk[i].target_index;
            r.reward = agents::reward_for(r.choice, r.target_index);
            for (double s : scores) r.distribution.push_back(std::exp(s));
            hits += r.reward == 1;
            ev.records.push_back(std::move(r));
        }
    }
    ev.accuracy = instances.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(instances.size());
    return ev;
}

}  // namespace

Evaluation evaluate(const agents::SpeakerPolicy& speaker, const nn::ParamStore& listener,
                    const Dataset& data, const std::vector<world::ReferentialInstance>& instances,
                    uint64_t seed, const std::string& speaker_name) {
    require(!instances.empty(), ErrorCode::invalid_argument, "no instances to evaluate");
    Rng rng(seed);
    return listen_all(training::speak(speaker, data, instances, rng), listener, data, instances,
                      speaker_name);
}

void write_records(const fs::path& path, const std::vector<RewardRecord>& records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    for (const auto& r : records) {
        json j = {{"instance_id", r.instance_id},
                  {"speaker", r.speaker},
                  {"message", r.message.text},
                  {"tokens", r.message.tokens},
                  {"choice", r.choice},
                  {"target_index", r.target_index},
                  {"reward", r.reward},
                  {"distribution", r.distribution}};
        out << j.dump() << '\n';
    }
}

std::vector<RewardRecord> read_records(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::not_found, "record file not found: " + path.string());
    std::vector<RewardRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        RewardRecord r;
        r.instance_id = j.at("instance_id").get<int64_t>();
        r.speaker = j.at("speaker").get<std::string>();
        r.message.text = j.value("message", "");
        r.message.tokens = j.value("tokens", std::vector<int>{});
        r.choice = j.at("choice").get<int>();
        r.target_index = j.at("target_index").get<int>();
        r.reward = j.at("reward").get<int>();
        r.distribution = j.value("distribution", std::vector<double>{});
        out.push_back(std::move(r));
    }
    return out;
}

double reaggregate(const fs::path& path) {
    const auto records = read_records(path);
    require(!records.empty(), ErrorCode::invalid_argument, "empty record file " + path.string());
    long hits = 0;
    for (const auto& r : records) hits += r.reward == 1;
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

CellResult evaluate_cell(const ExperimentConfig& c, const Dataset& data, const Pretrained& pre,
                         const RegimeSpec& regime, uint64_t seed, const PhaseResult& phase) {
    require(pre.fixed_listener && pre.captioner && pre.language_model, ErrorCode::dependency,
            "evaluation needs the pretrained captioner, language model and fixed listener; run pretrain first");
    const Layout l{c.out};
    const fs::path dir = l.cell(regime.name, seed);
    CellResult out;
    out.regime = regime.name;
    out.seed = seed;
    for (size_t s = 0; s < c.splits.size(); ++s) {
        const std::string& split = c.splits[s];
        const auto& inst = split_instances(data, split);
        Rng rng(combine(seed, nn::fnv1a(split)));
        const auto messages = training::speak(phase.speaker, data, inst, rng);
        for (const char* who : {"joint", "fixed"}) {
            const nn::ParamStore& listener = std::string(who) == "joint" ? phase.listener : *pre.fixed_listener;
            const Evaluation ev = listen_all(messages, listener, data, inst, regime.name);
            const std::string column = split + "/" + who;
            const fs::path file = dir / "records" / (split + "_" + who + ".jsonl");
            write_records(file, ev.records);
            out.values[column] = ev.accuracy;
            out.records[column] = fs::relative(file, l.root);
        }
        // Drift on the difficult split, or the last one when it is not evaluated.
        const bool has_difficult =
            std::find(c.splits.begin(), c.splits.end(), "difficult") != c.splits.end();
        if (has_difficult ? split != "difficult" : s + 1 != c.splits.size()) continue;
        drift::ReportInputs in;
        in.speaker = regime.name;
        in.messages = &messages;
        std::vector<const std::vector<double>*> rows;
        std::vector<int64_t> ids;
        for (const auto& i : inst) {
            rows.push_back(&data.u(i.target));
            ids.push_back(i.id);
            std::vector<std::vector<std::string>> caps;
            for (const auto& cap : data.corpus.captions_of(i.target)) caps.push_back(cap.tokens);
            in.captions.push_back(std::move(caps));
        }
        in.target_features = agents::feature_rows(rows);
        in.joint = {out.values[split + "/joint"], ids};
        in.reference = {out.values[split + "/fixed"], ids};
        out.drift = drift::drift_report(in, *pre.language_model, *pre.captioner, data.sizes, data.vocab);
        std::ofstream(dir / "drift.csv", std::ios::trunc)
            << drift::report_csv_header() << '\n'
            << drift::report_csv_row(out.drift) << '\n';
        out.records["drift"] = fs::relative(dir / "drift.csv", l.root);
    }
    return out;
}

}  // namespace refgame::harness
