#include <fstream>
#include <set>

#include "refgame/error.hpp"
#include "refgame/harness.hpp"

namespace refgame::harness {

using nlohmann::json;
using training::TrainingConfig;

namespace {

// Reads members of one JSON object and rejects any key nobody asked for.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        require(j.is_object(), ErrorCode::invalid_argument, where_ + ": expected an object");
    }
    ~Reader() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [key, value] : j_.items())
            require(seen_.count(key) != 0, ErrorCode::invalid_argument,
                    "unknown configuration key '" + where_ + "." + key + "'");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            fail(ErrorCode::invalid_argument, where_ + "." + key + ": " + e.what());
        }
    }
    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }
    std::string path(const char* key) const { return where_ + "." + key; }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

agents::ListenerRegime parse_listener(const std::string& s) {
    if (s == "joint") return agents::ListenerRegime::joint;
    if (s == "fixed") return agents::ListenerRegime::fixed;
    fail(ErrorCode::invalid_argument, "unknown listener regime '" + s + "'");
}

void read_training(const json& j, const std::string& where, TrainingConfig& t) {
    Reader r(j, where);
    r.get("lambda_f", t.lambda_f);
    r.get("lambda_s", t.lambda_s);
    r.get("kl_weight", t.kl_weight);
    r.get("entropy_coeff", t.entropy_coeff);
    r.get("baseline", t.baseline);
    r.get("baseline_decay", t.baseline_decay);
    r.get("episodes", t.episodes);
    r.get("batch_size", t.batch_size);
    r.get("learning_rate", t.learning_rate);
    r.get("listener_learning_rate", t.listener_learning_rate);
    r.get("listener_warm_start", t.listener_warm_start);
    std::string listener = agents::regime_name(t.listener);
    r.get("listener", listener);
    t.listener = parse_listener(listener);
    std::string unfreeze = training::unfreeze_name(t.unfreeze);
    r.get("unfreeze", unfreeze);
    t.unfreeze = training::parse_unfreeze(unfreeze);
    if (const json* d = r.child("decoding")) {
        Reader dr(*d, r.path("decoding"));
        dr.get("samples", t.decoding.samples);
        dr.get("temperature", t.decoding.temperature);
    }
    if (const json* k = r.child("rerank")) {
        Reader kr(*k, r.path("rerank"));
        kr.get("candidates", t.rerank.candidates);
        kr.get("lambda_f", t.rerank.lambda_f);
        kr.get("lambda_s", t.rerank.lambda_s);
        kr.get("sample_temperature", t.rerank.sample_temperature);
        kr.get("gold_candidates", t.rerank.gold_candidates);
    }
}

json training_json(const TrainingConfig& t) {
    return {{"lambda_f", t.lambda_f},
            {"lambda_s", t.lambda_s},
            {"kl_weight", t.kl_weight},
            {"entropy_coeff", t.entropy_coeff},
            {"baseline", t.baseline},
            {"baseline_decay", t.baseline_decay},
            {"episodes", t.episodes},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"listener_learning_rate", t.listener_learning_rate},
            {"listener_warm_start", t.listener_warm_start},
            {"listener", agents::regime_name(t.listener)},
            {"unfreeze", training::unfreeze_name(t.unfreeze)},
            {"decoding", {{"samples", t.decoding.samples}, {"temperature", t.decoding.temperature}}},
            {"rerank",
             {{"candidates", t.rerank.candidates},
              {"lambda_f", t.rerank.lambda_f},
              {"lambda_s", t.rerank.lambda_s},
              {"sample_temperature", t.rerank.sample_temperature},
              {"gold_candidates", t.rerank.gold_candidates}}}};
}

json world_json(const training::DataConfig& d) {
    const auto& c = d.catalog;
    return {{"scenes", d.scenes},
            {"captions_per_scene", d.captions_per_scene},
            {"seed", d.seed},
            {"ratios", d.ratios},
            {"pairs_per_split", d.pairs_per_split},
            {"catalog",
             {{"characters", c.characters},
              {"props", c.props},
              {"actions", c.actions},
              {"colors", c.colors},
              {"proper_names", c.proper_names},
              {"grid_width", c.grid_width},
              {"grid_height", c.grid_height}}}};
}

json sizes_json(const agents::Sizes& s) {
    return {{"adapter_dim", s.adapter_dim},         {"word_dim", s.word_dim},
            {"hidden", s.hidden},                   {"listener_dim", s.listener_dim},
            {"rerank_word_dim", s.rerank_word_dim}, {"message_embed", s.message_embed},
            {"emergent_vocab", s.emergent_vocab},   {"emergent_length", s.emergent_length},
            {"max_caption_length", s.max_caption_length}};
}

json pretrain_json(const training::PretrainConfig& p) {
    return {{"captioner_epochs", p.captioner_epochs},
            {"lm_epochs", p.lm_epochs},
            {"listener_steps", p.listener_steps},
            {"batch_size", p.batch_size},
            {"learning_rate", p.learning_rate},
            {"listener_learning_rate", p.listener_learning_rate}};
}

RegimeSpec regime(const char* name, agents::SpeakerVariant v, TrainingConfig t) {
    return {name, v, std::move(t)};
}

}  // namespace

std::vector<RegimeSpec> default_regimes(const TrainingConfig& base) {
    using agents::SpeakerVariant;
    TrainingConfig emergent = base;
    emergent.episodes = 3000;
    TrainingConfig kl = base;
    kl.kl_weight = 0.1;
    TrainingConfig nokl = base;
    nokl.kl_weight = 0.0;
    TrainingConfig multitask = base;
    multitask.lambda_s = 1.0;
    return {regime("emergent", SpeakerVariant::emergent, emergent),
            regime("captioner_greedy", SpeakerVariant::captioner_greedy, base),
            regime("captioner_sample", SpeakerVariant::captioner_sample, base),
            regime("finetune_kl", SpeakerVariant::finetuned, kl),
            regime("finetune_nokl", SpeakerVariant::finetuned, nokl),
            regime("multitask", SpeakerVariant::multitask, multitask),
            regime("poe", SpeakerVariant::poe_reranker, base),
            regime("noisy_channel", SpeakerVariant::noisy_channel, base),
            regime("oracle_random", SpeakerVariant::oracle_random, base),
            regime("oracle_discriminative", SpeakerVariant::oracle_discriminative, base)};
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.data.scenes = 3000;
    c.pretrain.captioner_epochs = 2;
    c.pretrain.lm_epochs = 2;
    c.pretrain.listener_steps = 800;
    c.regimes = default_regimes(c.training);
    return c;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c = default_config();
    Reader r(j, "config");
    if (const json* w = r.child("world")) {
        Reader wr(*w, "world");
        wr.get("scenes", c.data.scenes);
        wr.get("captions_per_scene", c.data.captions_per_scene);
        wr.get("seed", c.data.seed);
        wr.get("ratios", c.data.ratios);
        wr.get("pairs_per_split", c.data.pairs_per_split);
        if (const json* cat = wr.child("catalog")) {
            Reader cr(*cat, "world.catalog");
            auto& k = c.data.catalog;
            cr.get("characters", k.characters);
            cr.get("props", k.props);
            cr.get("actions", k.actions);
            cr.get("colors", k.colors);
            cr.get("proper_names", k.proper_names);
            cr.get("grid_width", k.grid_width);
            cr.get("grid_height", k.grid_height);
        }
    }
    if (const json* s = r.child("sizes")) {
        Reader sr(*s, "sizes");
        sr.get("adapter_dim", c.sizes.adapter_dim);
        sr.get("word_dim", c.sizes.word_dim);
        sr.get("hidden", c.sizes.hidden);
        sr.get("listener_dim", c.sizes.listener_dim);
        sr.get("rerank_word_dim", c.sizes.rerank_word_dim);
        sr.get("message_embed", c.sizes.message_embed);
        sr.get("emergent_vocab", c.sizes.emergent_vocab);
        sr.get("emergent_length", c.sizes.emergent_length);
        sr.get("max_caption_length", c.sizes.max_caption_length);
    }
    if (const json* p = r.child("pretrain")) {
        Reader pr(*p, "pretrain");
        pr.get("captioner_epochs", c.pretrain.captioner_epochs);
        pr.get("lm_epochs", c.pretrain.lm_epochs);
        pr.get("listener_steps", c.pretrain.listener_steps);
        pr.get("batch_size", c.pretrain.batch_size);
        pr.get("learning_rate", c.pretrain.learning_rate);
        pr.get("listener_learning_rate", c.pretrain.listener_learning_rate);
    }
    r.get("pretrain_seed", c.pretrain_seed);
    if (const json* t = r.child("training")) read_training(*t, "training", c.training);
    c.regimes = default_regimes(c.training);
    if (const json* regs = r.child("regimes")) {
        require(regs->is_array(), ErrorCode::invalid_argument, "regimes: expected a list");
        c.regimes.clear();
        std::set<std::string> names;
        for (const auto& entry : *regs) {
            Reader rr(entry, "regimes[]");
            RegimeSpec spec;
            rr.get("name", spec.name);
            std::string variant;
            rr.get("variant", variant);
            require(!variant.empty(), ErrorCode::invalid_argument, "regime needs a variant");
            spec.variant = agents::parse_variant(variant);
            if (spec.name.empty()) spec.name = variant;
            // Named defaults keep their tuned settings unless overridden.
            spec.training = c.training;
            for (const auto& d : default_regimes(c.training))
                if (d.name == spec.name && d.variant == spec.variant) spec.training = d.training;
            if (const json* t = rr.child("training")) read_training(*t, "regimes." + spec.name, spec.training);
            require(names.insert(spec.name).second, ErrorCode::invalid_argument,
                    "duplicate regime name '" + spec.name + "'");
            c.regimes.push_back(std::move(spec));
        }
    }
    r.get("splits", c.splits);
    for (const auto& s : c.splits)
        require(s == "easy" || s == "difficult", ErrorCode::invalid_argument,
                "unknown split '" + s + "'");
    r.get("seeds", c.seeds);
    require(!c.seeds.empty(), ErrorCode::invalid_argument, "seeds: at least one seed is required");
    if (const json* a = r.child("ablation")) {
        Reader ar(*a, "ablation");
        ar.get("episodes", c.ablation.episodes);
        ar.get("split", c.ablation.split);
        std::vector<std::string> sets;
        ar.get("sets", sets);
        if (!sets.empty()) {
            c.ablation.sets.clear();
            for (const auto& s : sets) c.ablation.sets.push_back(training::parse_unfreeze(s));
        }
    }
    if (const json* sv = r.child("service")) {
        Reader sr(*sv, "service");
        sr.get("groups", c.service.groups);
        sr.get("split", c.service.split);
        sr.get("rounds", c.service.rounds);
        sr.get("seed", c.service.seed);
        sr.get("host", c.service.host);
        sr.get("port", c.service.port);
        require(c.service.rounds >= 1, ErrorCode::invalid_argument, "service.rounds must be at least 1");
        for (const auto& [name, members] : c.service.groups)
            require(!members.empty(), ErrorCode::invalid_argument, "service group '" + name + "' is empty");
    }
    std::string out = c.out.string();
    r.get("out", out);
    c.out = out;
    r.get("workers", c.workers);
    require(c.workers >= 1, ErrorCode::invalid_argument, "workers must be at least 1");
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json regimes = json::array();
    for (const auto& r : c.regimes)
        regimes.push_back({{"name", r.name},
                           {"variant", agents::variant_name(r.variant)},
                           {"training", training_json(r.training)}});
    std::vector<std::string> sets;
    for (auto s : c.ablation.sets) sets.push_back(training::unfreeze_name(s));
    return {{"world", world_json(c.data)},
            {"sizes", sizes_json(c.sizes)},
            {"pretrain", pretrain_json(c.pretrain)},
            {"pretrain_seed", c.pretrain_seed},
            {"training", training_json(c.training)},
            {"regimes", regimes},
            {"splits", c.splits},
            {"seeds", c.seeds},
            {"ablation", {{"episodes", c.ablation.episodes}, {"split", c.ablation.split}, {"sets", sets}}},
            {"service",
             {{"groups", c.service.groups},
              {"split", c.service.split},
              {"rounds", c.service.rounds},
              {"seed", c.service.seed},
              {"host", c.service.host},
              {"port", c.service.port}}},
            {"out", c.out.string()},
            {"workers", c.workers}};
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::not_found, "config not found: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::invalid_argument, path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

const RegimeSpec& find_regime(const ExperimentConfig& c, const std::string& name) {
    for (const auto& r : c.regimes)
        if (r.name == name) return r;
    fail(ErrorCode::not_found, "no regime named '" + name + "' in the configuration");
}

uint64_t pretrain_fingerprint(const ExperimentConfig& c) {
    const json j = {{"world", world_json(c.data)},
                    {"sizes", sizes_json(c.sizes)},
                    {"pretrain", pretrain_json(c.pretrain)},
                    {"pretrain_seed", c.pretrain_seed}};
    return nn::fnv1a(j.dump());
}

uint64_t regime_fingerprint(const ExperimentConfig& c, const RegimeSpec& r) {
    const json j = {{"variant", agents::variant_name(r.variant)}, {"training", training_json(r.training)}};
    return nn::fnv1a(j.dump(), pretrain_fingerprint(c));
}

}  // namespace refgame::harness
