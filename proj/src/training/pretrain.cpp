#include "refgame/error.hpp"
#include "refgame/training.hpp"
#include "training_internal.hpp"

namespace refgame::training {

namespace {

struct CaptionRef {
    int64_t scene;
    int caption;
};

std::vector<CaptionRef> train_captions(const Dataset& data) {
    std::vector<CaptionRef> out;
    for (int64_t id : data.splits.train)
        for (size_t c = 0; c < data.caption_ids[static_cast<size_t>(id)].size(); ++c)
            out.push_back({id, static_cast<int>(c)});
    return out;
}

// Teacher-forced cross-entropy over the training captions for `epochs`.
ParamStore fit_decoder(const Dataset& data, const DecoderSpec& spec, bool conditional, int epochs,
                       const PretrainConfig& config, uint64_t seed, const char* phase,
                       MetricsLog* log) {
    require(epochs >= 1 && config.batch_size >= 1, ErrorCode::invalid_argument,
            std::string(phase) + ": epochs and batch size must be positive");
    Rng rng(seed);
    ParamStore store;
    agents::init_decoder(store, spec, data.sizes, rng);
    nn::Adam adam({config.learning_rate, 0.9, 0.999, 1e-8, 5.0});
    auto pairs = train_captions(data);
    require(!pairs.empty(), ErrorCode::invalid_argument, "no training captions");
    long step = 0;
    WindowMean loss_mean;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(pairs);
        for (size_t start = 0; start < pairs.size(); start += config.batch_size) {
            const size_t end = std::min(pairs.size(), start + config.batch_size);
            std::vector<std::vector<int>> caps;
            Tensor cond = Tensor::Zero(static_cast<long>(end - start), spec.cond_dim);
            for (size_t i = start; i < end; ++i) {
                caps.push_back(data.caption_ids[pairs[i].scene][pairs[i].caption]);
                if (conditional) {
                    const auto& u = data.u(pairs[i].scene);
                    for (size_t j = 0; j < u.size(); ++j)
                        cond(static_cast<long>(i - start), static_cast<long>(j)) = u[j];
                }
            }
            Graph g;
            StructuralLoss l = structural_loss(g, store, spec, cond, caps);
            g.backward(l.sequence_nll);
            adam.step(store, g.param_gradients());
            loss_mean.add(l.token_nll.scalar());
            if (log && ++step % 100 == 0) {
                MetricRow r;
                r.step = step;
                r.phase = phase;
                r.loss = loss_mean.take();
                r.structural = r.loss;
                log->write(r);
            }
        }
    }
    return store;
}

}  // namespace

ParamStore pretrain_captioner(const Dataset& data, const PretrainConfig& config, uint64_t seed,
                              MetricsLog* log) {
    return fit_decoder(data, agents::captioner_spec(data.sizes, data.vocab), true,
                       config.captioner_epochs, config, seed, "captioner", log);
}

ParamStore pretrain_language_model(const Dataset& data, const PretrainConfig& config,
                                   uint64_t seed, MetricsLog* log) {
    ParamStore lm = fit_decoder(data, agents::language_model_spec(data.sizes, data.vocab), false,
                                config.lm_epochs, config, seed, "language_model", log);
    lm.freeze(agents::kLanguageModel);
    return lm;
}

ParamStore pretrain_fixed_listener(const Dataset& data, const PretrainConfig& config,
                                   uint64_t seed, MetricsLog* log) {
    require(config.listener_steps >= 1, ErrorCode::invalid_argument,
            "listener pretraining needs at least one step");
    Rng rng(seed);
    ParamStore listener;
    agents::init_listener(listener, data.sizes, data.vocab, rng);
    nn::Adam adam({config.listener_learning_rate, 0.9, 0.999, 1e-8, 5.0});
    WindowMean loss_mean, acc_mean;
    for (long step = 1; step <= config.listener_steps; ++step) {
        const auto batch = draw_instances(data, data.splits.train, config.batch_size, rng);
        std::vector<std::vector<int>> messages;
        std::vector<int> targets;
        for (const auto& inst : batch) {
            const auto& tc = data.corpus.captions_of(inst.target);
            const auto& dc = data.corpus.captions_of(inst.distractors[0]);
            messages.push_back(agents::oracle_discriminative(tc, dc, data.vocab, rng).tokens);
            targets.push_back(inst.target_index);
        }
        Graph g;
        Var lp = agents::listener_log_probs(g, listener, messages, candidate_features(data, batch));
        Var loss = nn::cross_entropy(lp, targets);
        g.backward(loss);
        adam.step(listener, g.param_gradients());
        loss_mean.add(loss.scalar());
        acc_mean.add(argmax_accuracy(lp.value(), targets));
        if (log && step % 100 == 0) {
            MetricRow r;
            r.step = step;
            r.phase = "fixed_listener";
            r.loss = loss_mean.take();
            r.accuracy = acc_mean.take();
            log->write(r);
        }
    }
    listener.freeze(agents::kListenerAdapter);
    listener.freeze(agents::kListenerLstm);
    return listener;
}

}  // namespace refgame::training
