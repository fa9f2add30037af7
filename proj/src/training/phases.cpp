#include <cmath>

#include "refgame/error.hpp"
#include "refgame/training.hpp"
#include "training_internal.hpp"

namespace refgame::training {

using world::ReferentialInstance;

// ---- shared helpers ------------------------------------------------------------------------

std::vector<ReferentialInstance> draw_instances(const Dataset& data,
                                                const std::vector<int64_t>& pool, int count,
                                                Rng& rng) {
    (void)data;
    return world::sample_instances(pool, count, 1, rng.next_u64());
}

double argmax_accuracy(const Tensor& log_probs, const std::vector<int>& targets) {
    int hits = 0;
    for (long b = 0; b < log_probs.rows(); ++b) {
        long best = 0;
        for (long c = 1; c < log_probs.cols(); ++c)
            if (log_probs(b, c) > log_probs(b, best)) best = c;
        hits += best == targets[b];
    }
    return static_cast<double>(hits) / static_cast<double>(log_probs.rows());
}

std::vector<int> listener_input(const Message& m) {
    if (m.tokens.empty()) return {agents::Vocabulary::kEos};
    return m.tokens;
}

std::vector<Tensor> candidate_features(const Dataset& data,
                                       const std::vector<ReferentialInstance>& instances) {
    require(!instances.empty(), ErrorCode::invalid_argument, "no instances");
    const size_t c = instances[0].candidates.size();
    std::vector<Tensor> out;
    for (size_t k = 0; k < c; ++k) {
        std::vector<const std::vector<double>*> rows;
        for (const auto& inst : instances) {
            require(inst.candidates.size() == c, ErrorCode::shape_mismatch,
                    "instances in a batch must have the same candidate count");
            rows.push_back(&data.u(inst.candidates[k]));
        }
        out.push_back(agents::feature_rows(rows));
    }
    return out;
}

namespace {

Tensor target_rows(const Dataset& data, const std::vector<ReferentialInstance>& instances,
                   int repeat = 1) {
    std::vector<const std::vector<double>*> rows;
    for (const auto& inst : instances)
        for (int r = 0; r < repeat; ++r) rows.push_back(&data.u(inst.target));
    return agents::feature_rows(rows);
}

Tensor target_distractor_rows(const Dataset& data,
                              const std::vector<ReferentialInstance>& instances) {
    const long f = data.sizes.feature_dim;
    Tensor t(static_cast<long>(instances.size()), 2 * f);
    for (size_t i = 0; i < instances.size(); ++i) {
        const auto& ut = data.u(instances[i].target);
        const auto& ud = data.u(instances[i].distractors.at(0));
        for (long j = 0; j < f; ++j) {
            t(static_cast<long>(i), j) = ut[j];
            t(static_cast<long>(i), f + j) = ud[j];
        }
    }
    return t;
}

std::vector<Message> rollout_to_messages(const agents::Rollout& r, const DecoderSpec& spec,
                                         const agents::Vocabulary& vocab) {
    std::vector<Message> out;
    for (size_t b = 0; b < r.sequences.size(); ++b)
        out.push_back(agents::to_message(r.sequences[b], {}, r.eos_terminated[b], spec, vocab));
    return out;
}

bool any_unfrozen(const ParamStore& store) {
    for (const auto& g : store.groups())
        if (!store.group_frozen(g)) return true;
    return false;
}

struct ListenOutcome {
    std::vector<double> rewards;
    double accuracy = 0.0;
};

// Plays one batch of rounds. The listener samples its choice; a trainable
// listener then takes one cross-entropy step on the same batch.
ListenOutcome listen(ParamStore& listener, nn::Adam* optimizer, const Dataset& data,
                     const std::vector<Message>& messages,
                     const std::vector<ReferentialInstance>& instances, Rng& rng) {
    std::vector<std::vector<int>> inputs;
    std::vector<int> targets;
    for (size_t i = 0; i < messages.size(); ++i) {
        inputs.push_back(listener_input(messages[i]));
        targets.push_back(instances[i].target_index);
    }
    const bool train = optimizer && any_unfrozen(listener);
    Graph g(train);
    Var lp = agents::listener_log_probs(g, listener, inputs, candidate_features(data, instances));
    ListenOutcome out;
    const Tensor& v = lp.value();
    std::vector<double> w(static_cast<size_t>(v.cols()));
    for (long b = 0; b < v.rows(); ++b) {
        for (long c = 0; c < v.cols(); ++c) w[c] = std::exp(v(b, c));
        const int choice = rng.categorical(w);
        out.rewards.push_back(agents::reward_for(choice, targets[b]));
    }
    out.accuracy = argmax_accuracy(v, targets);
    if (train) {
        Var loss = nn::cross_entropy(lp, targets);
        g.backward(loss);
        optimizer->step(listener, g.param_gradients());
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

bool is_reranker(SpeakerVariant v) {
    return v == SpeakerVariant::poe_reranker || v == SpeakerVariant::noisy_channel;
}

}  // namespace

const char* unfreeze_name(UnfreezeSet u) {
    switch (u) {
        case UnfreezeSet::rerank_only: return "rerank_only";
        case UnfreezeSet::speaker_adapter: return "speaker_adapter";
        case UnfreezeSet::both_adapters: return "both_adapters";
    }
    return "unknown";
}

UnfreezeSet parse_unfreeze(std::string_view name) {
    for (auto u : {UnfreezeSet::rerank_only, UnfreezeSet::speaker_adapter, UnfreezeSet::both_adapters})
        if (name == unfreeze_name(u)) return u;
    fail(ErrorCode::invalid_argument, "unknown unfreeze set '" + std::string(name) + "'");
}

Requirements requirements(SpeakerVariant v) {
    Requirements r;
    r.captioner = v == SpeakerVariant::captioner_greedy || v == SpeakerVariant::captioner_sample ||
                  v == SpeakerVariant::finetuned || v == SpeakerVariant::multitask || is_reranker(v);
    return r;
}

// ---- candidates -------------------------------------------------------------------------------

CandidateSet sample_candidates(const SpeakerPolicy& speaker, const Dataset& data,
                               const std::vector<ReferentialInstance>& instances, int count,
                               double temperature, Rng& rng) {
    require(count >= 1, ErrorCode::invalid_argument, "candidate count must be positive");
    const DecoderSpec spec = agents::captioner_spec(data.sizes, data.vocab);
    CandidateSet out;
    out.per_instance = count;
    out.messages = agents::decode_samples(speaker.params, spec, data.vocab,
                                          target_rows(data, instances, count), temperature, rng);
    out.base_logprobs.resize(static_cast<long>(instances.size()), count);
    for (size_t i = 0; i < out.messages.size(); ++i) {
        // Untempered log-probability of the drawn sample.
        const double lp = temperature == 1.0
                              ? out.messages[i].logprob()
                              : agents::score_messages(speaker.params, spec,
                                                       target_rows(data, {instances[i / count]}),
                                                       {out.messages[i]})[0];
        out.base_logprobs(static_cast<long>(i / count), static_cast<long>(i % count)) = lp;
    }
    return out;
}

CandidateSet gold_candidates(const SpeakerPolicy& speaker, const Dataset& data,
                             const std::vector<ReferentialInstance>& instances) {
    CandidateSet out;
    for (const auto& inst : instances)
        out.per_instance = std::max(out.per_instance,
                                    static_cast<int>(data.corpus.captions_of(inst.target).size()));
    const long b = static_cast<long>(instances.size());
    out.bias = Tensor::Zero(b, out.per_instance);
    for (long i = 0; i < b; ++i) {
        const auto& caps = data.corpus.captions_of(instances[i].target);
        for (int k = 0; k < out.per_instance; ++k) {
            const bool real = k < static_cast<int>(caps.size());
            out.messages.push_back(agents::caption_message(caps[real ? k : 0], data.vocab));
            if (!real) out.bias(i, k) = -1e9;
        }
    }
    const auto scores =
        agents::score_messages(speaker.params, agents::captioner_spec(data.sizes, data.vocab),
                               target_rows(data, instances, out.per_instance), out.messages);
    out.base_logprobs.resize(b, out.per_instance);
    for (size_t i = 0; i < scores.size(); ++i)
        out.base_logprobs(static_cast<long>(i) / out.per_instance,
                          static_cast<long>(i) % out.per_instance) = scores[i];
    return out;
}

agents::RerankBatch rerank_batch(const Dataset& data, const CandidateSet& candidates,
                                 const std::vector<ReferentialInstance>& instances) {
    agents::RerankBatch batch;
    std::vector<const Message*> msgs;
    for (const auto& m : candidates.messages) msgs.push_back(&m);
    batch.counts = agents::bag_of_words(msgs, data.vocab);
    batch.base_logprobs = candidates.base_logprobs;
    batch.bias = candidates.bias;
    batch.candidate_features = candidate_features(data, instances);
    for (const auto& inst : instances) batch.target_index.push_back(inst.target_index);
    return batch;
}

namespace {

Var rerank_log_policy(Graph& g, const SpeakerPolicy& speaker, const agents::RerankBatch& batch) {
    if (speaker.variant == SpeakerVariant::poe_reranker)
        return agents::poe_log_policy(g, speaker.params, batch, speaker.rerank.lambda_f,
                                      speaker.rerank.lambda_s);
    return agents::noisy_channel_log_policy(g, speaker.params, batch);
}

CandidateSet candidates_for(const SpeakerPolicy& speaker, const Dataset& data,
                            const std::vector<ReferentialInstance>& instances, Rng& rng) {
    if (speaker.rerank.gold_candidates) return gold_candidates(speaker, data, instances);
    return sample_candidates(speaker, data, instances, speaker.rerank.candidates,
                             speaker.rerank.sample_temperature, rng);
}

std::vector<Message> speak_chunk(const SpeakerPolicy& speaker, const Dataset& data,
                                 const std::vector<ReferentialInstance>& chunk, Rng& rng) {
    const auto& vocab = data.vocab;
    switch (speaker.variant) {
        case SpeakerVariant::emergent:
            return agents::decode_greedy(speaker.params, agents::emergent_spec(data.sizes, vocab),
                                         vocab, target_distractor_rows(data, chunk));
        case SpeakerVariant::captioner_greedy:
        case SpeakerVariant::finetuned:
        case SpeakerVariant::multitask:
            return agents::decode_greedy(speaker.params, agents::captioner_spec(data.sizes, vocab),
                                         vocab, target_rows(data, chunk));
        case SpeakerVariant::captioner_sample: {
            const int k = speaker.decoding.samples;
            require(k >= 1, ErrorCode::invalid_argument, "k must be at least 1");
            const auto drawn = agents::decode_samples(
                speaker.params, agents::captioner_spec(data.sizes, vocab), vocab,
                target_rows(data, chunk, k), speaker.decoding.temperature, rng);
            std::vector<Message> out;
            for (size_t i = 0; i < chunk.size(); ++i) {
                size_t best = i * k;
                for (size_t j = i * k + 1; j < (i + 1) * k; ++j)
                    if (drawn[j].logprob() > drawn[best].logprob()) best = j;
                out.push_back(drawn[best]);
            }
            return out;
        }
        case SpeakerVariant::poe_reranker:
        case SpeakerVariant::noisy_channel: {
            const CandidateSet cands = candidates_for(speaker, data, chunk, rng);
            Graph g(false);
            const Tensor lp = rerank_log_policy(g, speaker, rerank_batch(data, cands, chunk)).value();
            std::vector<Message> out;
            for (long i = 0; i < lp.rows(); ++i) {
                long best = 0;
                for (long k = 1; k < lp.cols(); ++k)
                    if (lp(i, k) > lp(i, best)) best = k;
                out.push_back(cands.messages[static_cast<size_t>(i * cands.per_instance + best)]);
            }
            return out;
        }
        case SpeakerVariant::oracle_random:
        case SpeakerVariant::oracle_discriminative: {
            std::vector<Message> out;
            for (const auto& inst : chunk) {
                const auto& tc = data.corpus.captions_of(inst.target);
                if (speaker.variant == SpeakerVariant::oracle_random)
                    out.push_back(agents::oracle_random(tc, vocab, rng));
                else
                    out.push_back(agents::oracle_discriminative(
                        tc, data.corpus.captions_of(inst.distractors.at(0)), vocab, rng));
            }
            return out;
        }
    }
    fail(ErrorCode::internal, "unhandled speaker variant");
}

}  // namespace

std::vector<Message> speak(const SpeakerPolicy& speaker, const Dataset& data,
                           const std::vector<ReferentialInstance>& instances, Rng& rng) {
    constexpr size_t kChunk = 32;
    std::vector<Message> out;
    for (size_t start = 0; start < instances.size(); start += kChunk) {
        const std::vector<ReferentialInstance> chunk(
            instances.begin() + static_cast<long>(start),
            instances.begin() + static_cast<long>(std::min(instances.size(), start + kChunk)));
        for (auto& m : speak_chunk(speaker, data, chunk, rng)) out.push_back(std::move(m));
    }
    return out;
}

// ---- phases ----------------------------------------------------------------------------------

namespace {

struct StepTerms {
    Var sequence_logprob;
    Var entropy;
    Var extra;  // KL or structural term already weighted, may be invalid
    double kl = 0.0;
    double structural = 0.0;
    std::vector<Message> messages;
};

class PhaseRunner {
public:
    PhaseRunner(const Dataset& data, const Pretrained& pre, const TrainingConfig& cfg,
                PhaseResult& result, Rng& rng)
        : data_(data), pre_(pre), cfg_(cfg), res_(result), rng_(rng) {}

    void run(MetricsLog* log) {
        nn::Adam speaker_opt({cfg_.learning_rate, 0.9, 0.999, 1e-8, 5.0});
        nn::Adam listener_opt({cfg_.listener_learning_rate, 0.9, 0.999, 1e-8, 5.0});
        nn::Adam* lopt = cfg_.listener == ListenerRegime::joint ? &listener_opt : nullptr;
        Baseline baseline(cfg_.baseline, cfg_.baseline_decay);
        WindowMean loss_m, reward_m, acc_m, ent_m, kl_m, struct_m;
        const char* phase = agents::variant_name(res_.speaker.variant);
        for (long step = 1; step <= cfg_.episodes; ++step) {
            const auto batch = draw_instances(data_, data_.splits.train, cfg_.batch_size, rng_);
            Graph g;
            StepTerms terms = forward(g, batch);
            const ListenOutcome heard = listen(res_.listener, lopt, data_, terms.messages, batch, rng_);
            Var loss = reinforce_loss(terms.sequence_logprob, terms.entropy, heard.rewards,
                                      cfg_.entropy_coeff, baseline.value());
            if (res_.speaker.variant == SpeakerVariant::multitask)
                loss = multitask_loss(loss, terms.extra, cfg_.lambda_f, cfg_.lambda_s);
            else if (terms.extra.valid())
                loss = nn::add(loss, terms.extra);
            g.backward(loss);
            speaker_opt.step(res_.speaker.params, g.param_gradients());
            baseline.update(heard.rewards);

            loss_m.add(loss.scalar());
            reward_m.add(mean_of(heard.rewards));
            acc_m.add(heard.accuracy);
            ent_m.add(terms.entropy.scalar());
            kl_m.add(terms.kl);
            struct_m.add(terms.structural);
            if (log && (step % 50 == 0 || step == cfg_.episodes)) {
                MetricRow r;
                r.step = step;
                r.phase = phase;
                r.loss = loss_m.take();
                r.reward = reward_m.take();
                r.functional = r.reward;
                r.accuracy = acc_m.take();
                r.entropy = ent_m.take();
                r.kl = kl_m.take();
                r.structural = struct_m.take();
                log->write(r);
            }
        }
    }

private:
    StepTerms forward(Graph& g, const std::vector<ReferentialInstance>& batch) {
        const auto& vocab = data_.vocab;
        SpeakerPolicy& sp = res_.speaker;
        StepTerms t;
        switch (sp.variant) {
            case SpeakerVariant::emergent: {
                const DecoderSpec spec = agents::emergent_spec(data_.sizes, vocab);
                auto r = agents::decoder_rollout(g, sp.params, spec,
                                                 target_distractor_rows(data_, batch), 1.0, false, rng_);
                t.sequence_logprob = r.sequence_logprob;
                t.entropy = masked_mean_entropy(g, r.step_log_probs, r.mask);
                t.messages = rollout_to_messages(r, spec, vocab);
                return t;
            }
            case SpeakerVariant::finetuned:
            case SpeakerVariant::multitask: {
                const DecoderSpec spec = agents::captioner_spec(data_.sizes, vocab);
                auto r = agents::decoder_rollout(g, sp.params, spec, target_rows(data_, batch), 1.0,
                                                 false, rng_);
                t.sequence_logprob = r.sequence_logprob;
                t.entropy = masked_mean_entropy(g, r.step_log_probs, r.mask);
                t.messages = rollout_to_messages(r, spec, vocab);
                if (sp.variant == SpeakerVariant::finetuned && cfg_.kl_weight > 0.0) {
                    Var kl = kl_to_pretrained(g, r, batch);
                    t.kl = kl.scalar();
                    t.extra = nn::scale(kl, cfg_.kl_weight);
                }
                if (sp.variant == SpeakerVariant::multitask) {
                    Var s = structural_batch(g, spec);
                    t.structural = s.scalar();
                    t.extra = s;
                }
                return t;
            }
            case SpeakerVariant::poe_reranker:
            case SpeakerVariant::noisy_channel: {
                const CandidateSet cands = candidates_for(sp, data_, batch, rng_);
                Var lp = rerank_log_policy(g, sp, rerank_batch(data_, cands, batch));
                const Tensor& v = lp.value();
                std::vector<int> chosen;
                std::vector<double> w(static_cast<size_t>(v.cols()));
                for (long b = 0; b < v.rows(); ++b) {
                    for (long k = 0; k < v.cols(); ++k) w[k] = std::exp(v(b, k));
                    chosen.push_back(rng_.categorical(w));
                    t.messages.push_back(
                        cands.messages[static_cast<size_t>(b * cands.per_instance + chosen.back())]);
                }
                t.sequence_logprob = nn::pick(lp, chosen);
                t.entropy = nn::mean(nn::entropy_from_log_probs(lp));
                return t;
            }
            default:
                fail(ErrorCode::internal, "variant has no training phase");
        }
    }

    Var kl_to_pretrained(Graph& g, const agents::Rollout& r,
                         const std::vector<ReferentialInstance>& batch) {
        const DecoderSpec spec = agents::captioner_spec(data_.sizes, data_.vocab);
        Graph ref(false);
        const auto tf = agents::decoder_teacher_forced(ref, *pre_.captioner, spec,
                                                       target_rows(data_, batch), r.sequences,
                                                       &r.eos_terminated);
        std::vector<Tensor> pre;
        for (const Var& v : tf.step_log_probs) pre.push_back(v.value());
        return kl_regularizer(g, r.step_log_probs, pre, r.mask);
    }

    Var structural_batch(Graph& g, const DecoderSpec& spec) {
        const auto& train = data_.splits.train;
        std::vector<std::vector<int>> caps;
        std::vector<const std::vector<double>*> rows;
        for (int i = 0; i < cfg_.batch_size; ++i) {
            const int64_t id = train[rng_.below(train.size())];
            const auto& c = data_.caption_ids[static_cast<size_t>(id)];
            caps.push_back(c[rng_.below(c.size())]);
            rows.push_back(&data_.u(id));
        }
        return structural_loss(g, res_.speaker.params, spec, agents::feature_rows(rows), caps)
            .sequence_nll;
    }

    const Dataset& data_;
    const Pretrained& pre_;
    const TrainingConfig& cfg_;
    PhaseResult& res_;
    Rng& rng_;
};

}  // namespace

PhaseResult run_phase(const Dataset& data, const Pretrained& pre, SpeakerVariant variant,
                      const TrainingConfig& cfg, uint64_t seed, MetricsLog* log) {
    const char* name = agents::variant_name(variant);
    const Requirements req = requirements(variant);
    if (req.captioner && !pre.captioner)
        fail(ErrorCode::dependency,
             std::string("regime '") + name + "' needs a pretrained captioner; run pretrain first");
    if (req.fixed_listener && !pre.fixed_listener)
        fail(ErrorCode::dependency,
             std::string("regime '") + name + "' needs the pretrained fixed listener; run pretrain first");
    if (variant == SpeakerVariant::emergent && cfg.listener == ListenerRegime::fixed)
        fail(ErrorCode::invalid_argument, "emergent self-play needs a joint listener");
    require(cfg.episodes >= 0 && cfg.batch_size >= 1, ErrorCode::invalid_argument,
            "episodes must be non-negative and batch size positive");
    require(cfg.entropy_coeff >= 0.0 && cfg.kl_weight >= 0.0 && cfg.lambda_f >= 0.0 &&
                cfg.lambda_s >= 0.0,
            ErrorCode::invalid_argument, "loss weights must be non-negative");

    Rng rng(seed);
    PhaseResult res;
    res.speaker.variant = variant;
    res.speaker.decoding = cfg.decoding;
    res.speaker.rerank = cfg.rerank;
    res.listener = *pre.fixed_listener;

    bool trains = false;
    switch (variant) {
        case SpeakerVariant::oracle_random:
        case SpeakerVariant::oracle_discriminative:
            break;
        case SpeakerVariant::captioner_greedy:
        case SpeakerVariant::captioner_sample:
            res.speaker.params = *pre.captioner;
            break;
        case SpeakerVariant::emergent: {
            Rng init = rng.fork(1);
            agents::init_decoder(res.speaker.params, agents::emergent_spec(data.sizes, data.vocab),
                                 data.sizes, init);
            trains = true;
            break;
        }
        case SpeakerVariant::finetuned:
        case SpeakerVariant::multitask:
            res.speaker.params = *pre.captioner;
            res.speaker.params.unfreeze(agents::kSpeakerAdapter);
            res.speaker.params.unfreeze(agents::kSpeakerLstm);
            trains = true;
            break;
        case SpeakerVariant::poe_reranker:
        case SpeakerVariant::noisy_channel: {
            res.speaker.params = *pre.captioner;
            res.speaker.params.freeze(agents::kSpeakerLstm);
            res.speaker.params.freeze(agents::kSpeakerAdapter);
            if (cfg.unfreeze != UnfreezeSet::rerank_only)
                res.speaker.params.unfreeze(agents::kSpeakerAdapter);
            Rng init = rng.fork(2);
            agents::init_reranker(res.speaker.params, data.sizes, data.vocab, init);
            trains = true;
            break;
        }
    }
    require(!(res.speaker.rerank.gold_candidates && !is_reranker(variant)),
            ErrorCode::invalid_argument, "gold candidates only apply to rerankers");

    if (trains && cfg.listener == ListenerRegime::joint) {
        // The joint listener learns its message encoder from scratch during
        // play and reuses the grounded scene adapter of the pretrained
        // listener, which stays fixed unless both adapters are unfrozen.
        Rng init = rng.fork(3);
        ParamStore joint;
        agents::init_listener(joint, data.sizes, data.vocab, init);
        joint.copy_group(*pre.fixed_listener, agents::kListenerAdapter);
        if (cfg.listener_warm_start && variant != SpeakerVariant::emergent) {
            joint.copy_group(*pre.fixed_listener, agents::kListenerLstm);
            joint.unfreeze(agents::kListenerLstm);
        }
        joint.freeze(agents::kListenerAdapter);
        if (is_reranker(variant) && cfg.unfreeze == UnfreezeSet::both_adapters)
            joint.unfreeze(agents::kListenerAdapter);
        res.listener = std::move(joint);
    }
    if (trains) PhaseRunner(data, pre, cfg, res, rng).run(log);
    return res;
}

}  // namespace refgame::training
