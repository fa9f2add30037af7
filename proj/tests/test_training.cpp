#include <cmath>
#include <numeric>

#include "doctest.h"
#include "refgame/error.hpp"
#include "refgame/training.hpp"
#include "reinforce_oracle.hpp"

using namespace refgame;
using namespace refgame::training;
using nn::Gradients;

namespace {

agents::Sizes small_sizes() {
    agents::Sizes s;
    s.adapter_dim = 12;
    s.word_dim = 8;
    s.hidden = 10;
    s.listener_dim = 9;
    s.rerank_word_dim = 7;
    s.message_embed = 11;
    return s;
}

struct Toy {
    Dataset data;
    Pretrained pre;

    Toy() : data(make()) {
        PretrainConfig pc;
        pc.captioner_epochs = 1;
        pc.lm_epochs = 1;
        pc.listener_steps = 20;
        pc.batch_size = 16;
        pre.captioner = pretrain_captioner(data, pc, 1);
        pre.language_model = pretrain_language_model(data, pc, 2);
        pre.fixed_listener = pretrain_fixed_listener(data, pc, 3);
    }

    static Dataset make() {
        DataConfig dc;
        dc.scenes = 150;
        dc.pairs_per_split = 10;
        return make_dataset(dc, small_sizes());
    }
};

const Toy& toy() {
    static const Toy t;
    return t;
}

TrainingConfig quick(int episodes = 3) {
    TrainingConfig c;
    c.episodes = episodes;
    c.batch_size = 4;
    c.rerank.candidates = 4;
    return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("REINFORCE on an exhaustively enumerated bandit matches the exact policy gradient") {
    for (double baseline : {0.0, 1.7}) CHECK(reinforce_oracle::exhaustive_gradient_error(baseline) < 1e-9);
}

TEST_CASE("sequence REINFORCE expectation over all messages equals the exact gradient") {
    auto sizes = small_sizes();
    sizes.emergent_vocab = 2;
    sizes.emergent_length = 2;
    world::Catalog cat;
    sizes.feature_dim = 3;
    agents::Vocabulary vocab(cat, sizes.emergent_vocab);
    const auto spec = agents::emergent_spec(sizes, vocab);
    ParamStore store;
    Rng rng(5);
    agents::init_decoder(store, spec, sizes, rng);
    Tensor cond(1, spec.cond_dim);
    for (long j = 0; j < cond.cols(); ++j) cond(0, j) = 0.3 * std::sin(1.0 + j);

    std::vector<std::vector<int>> all = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    const std::vector<double> reward = {1.0, -1.0, -1.0, 1.0};
    const std::vector<bool> no_eos(1, false);

    Graph exact;
    Var total;
    for (size_t m = 0; m < all.size(); ++m) {
        auto tf = agents::decoder_teacher_forced(exact, store, spec, cond, {all[m]}, &no_eos);
        Var term = nn::scale(nn::exp(tf.sequence_logprob), -reward[m]);
        total = total.valid() ? nn::add(total, term) : term;
    }
    exact.backward(nn::sum(total));
    const Gradients truth = exact.param_gradients();

    Gradients estimate;
    double mass = 0.0;
    for (size_t m = 0; m < all.size(); ++m) {
        Graph g;
        auto tf = agents::decoder_teacher_forced(g, store, spec, cond, {all[m]}, &no_eos);
        const double p = std::exp(tf.sequence_logprob.scalar());
        mass += p;
        g.backward(reinforce_loss(tf.sequence_logprob, Var{}, {reward[m]}, 0.0, 0.4));
        for (const auto& [name, grad] : g.param_gradients()) {
            auto it = estimate.find(name);
            if (it == estimate.end()) estimate[name] = p * grad;
            else it->second += p * grad;
        }
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    double worst = 0.0;
    for (const auto& [name, grad] : truth) worst = std::max(worst, max_abs_diff(estimate.at(name), grad));
    CHECK(worst < 1e-9);
}

TEST_CASE("a 3-armed bandit trained with REINFORCE settles on the best arm") {
    CHECK(reinforce_oracle::bandit_success_rate(300) >= 0.99);
}

TEST_CASE("baseline is an exponential moving average and 0 when disabled") {
    Baseline b(true, 0.5);
    CHECK(b.value() == 0.0);
    b.update({1.0, 3.0});
    CHECK(b.value() == doctest::Approx(2.0));
    b.update({0.0});
    CHECK(b.value() == doctest::Approx(1.0));
    Baseline off(false, 0.5);
    off.update({5.0});
    CHECK(off.value() == 0.0);
}

TEST_CASE("reinforce loss value and entropy bonus") {
    Graph g;
    Tensor lp(2, 1);
    lp << -1.0, -2.0;
    Var seq = g.variable(lp);
    Var ent = g.variable(Tensor::Constant(1, 1, 0.7));
    Var loss = reinforce_loss(seq, ent, {1.0, -1.0}, 0.1, 0.5);
    // -mean[(r - b) log p] - 0.1 H = -[(0.5)(-1) + (-1.5)(-2)] / 2 - 0.07
    CHECK(loss.scalar() == doctest::Approx(-(-0.5 + 3.0) / 2.0 - 0.07));
    CHECK_THROWS_AS(reinforce_loss(seq, ent, {1.0}, 0.1, 0.0), Error);
    CHECK_THROWS_AS(reinforce_loss(seq, ent, {}, 0.1, 0.0), Error);
}

TEST_CASE("KL regulariser matches the closed form and vanishes for identical policies") {
    Rng rng(3);
    Tensor a(2, 4), b(2, 4);
    for (long i = 0; i < 2; ++i)
        for (long j = 0; j < 4; ++j) {
            a(i, j) = rng.normal();
            b(i, j) = rng.normal();
        }
    auto normalise = [](Tensor t) {
        for (long i = 0; i < t.rows(); ++i) {
            const double lse = std::log(t.row(i).array().exp().sum());
            t.row(i).array() -= lse;
        }
        return t;
    };
    a = normalise(a);
    b = normalise(b);
    Tensor mask(2, 2);
    mask << 1, 1, 1, 0;  // row 1 ends after its first step

    Graph g;
    Var s0 = g.variable(a), s1 = g.variable(b);
    Var kl = kl_regularizer(g, {s0, s1}, {b, a}, mask);
    auto kl_row = [](const Tensor& p, const Tensor& q, long i) {
        double s = 0.0;
        for (long j = 0; j < p.cols(); ++j) s += std::exp(p(i, j)) * (p(i, j) - q(i, j));
        return s;
    };
    const double expected = (kl_row(a, b, 0) + kl_row(a, b, 1) + kl_row(b, a, 0)) / 3.0;
    CHECK(kl.scalar() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(kl.scalar() > 0.0);

    Graph same;
    Var z = kl_regularizer(same, {same.variable(a)}, {a}, Tensor::Ones(2, 1));
    CHECK(std::abs(z.scalar()) < 1e-15);

    Graph bad;
    CHECK_THROWS_AS(kl_regularizer(bad, {bad.variable(a)}, {Tensor::Zero(2, 3)}, Tensor::Ones(2, 1)),
                    Error);
}

TEST_CASE("masked mean entropy averages only active cells") {
    Graph g;
    Tensor uniform = Tensor::Constant(2, 4, std::log(0.25));
    Tensor peaked(2, 4);
    peaked << 0, -1e3, -1e3, -1e3, 0, -1e3, -1e3, -1e3;
    Tensor mask(2, 2);
    mask << 1, 1, 0, 1;
    Var h = masked_mean_entropy(g, {g.constant(uniform), g.constant(peaked)}, mask);
    CHECK(h.scalar() == doctest::Approx(std::log(4.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("multitask loss: lambda_s = 0 is the functional loss, and it is linear in the weights") {
    Graph g;
    Var f = g.variable(Tensor::Constant(1, 1, 2.0));
    Var s = g.variable(Tensor::Constant(1, 1, 5.0));
    CHECK(multitask_loss(f, s, 1.0, 0.0).scalar() == 2.0);
    CHECK(multitask_loss(f, s, 0.5, 0.1).scalar() == doctest::Approx(1.5));
    CHECK(multitask_loss(f, s, 2.0, 2.0).scalar() ==
          doctest::Approx(2.0 * multitask_loss(f, s, 1.0, 1.0).scalar()));
    CHECK_THROWS_AS(multitask_loss(f, s, -1.0, 0.0), Error);
}

TEST_CASE("structural loss equals the negated captioner scores") {
    const auto& t = toy();
    const auto spec = agents::captioner_spec(t.data.sizes, t.data.vocab);
    std::vector<std::vector<int>> caps;
    std::vector<agents::Message> msgs;
    std::vector<const std::vector<double>*> rows;
    for (int64_t id : {0, 1, 2}) {
        caps.push_back(t.data.caption_ids[id][0]);
        msgs.push_back(agents::caption_message(t.data.corpus.captions_of(id)[0], t.data.vocab));
        rows.push_back(&t.data.u(id));
    }
    const Tensor cond = agents::feature_rows(rows);
    const auto scores = agents::score_messages(*t.pre.captioner, spec, cond, msgs);
    Graph g(false);
    const auto l = structural_loss(g, *t.pre.captioner, spec, cond, caps);
    const double total = -(scores[0] + scores[1] + scores[2]);
    long tokens = 0;
    for (const auto& c : caps) tokens += static_cast<long>(c.size()) + 1;
    CHECK(l.sequence_nll.scalar() == doctest::Approx(total / 3.0).epsilon(1e-12));
    CHECK(l.token_nll.scalar() == doctest::Approx(total / tokens).epsilon(1e-12));
}

TEST_CASE("the unconditional LM learns the entropy of a one-word-caption corpus") {
    // Captions are single words: "mike" one time in three, "jenny" otherwise.
    // The best achievable NLL per caption is the unigram entropy (the <eos>
    // after the word is certain).
    const auto& t = toy();
    DataConfig dc;
    dc.scenes = 150;
    dc.pairs_per_split = 10;
    Dataset d = make_dataset(dc, small_sizes());
    const int a = t.data.vocab.id("mike"), b = t.data.vocab.id("jenny");
    REQUIRE(a > 1);
    REQUIRE(b > 1);
    long n = 0;
    for (auto& caps : d.caption_ids)
        for (auto& c : caps) c = {n++ % 3 == 0 ? a : b};
    PretrainConfig pc;
    pc.lm_epochs = 12;
    pc.batch_size = 32;
    pc.learning_rate = 1e-2;
    const ParamStore lm = pretrain_language_model(d, pc, 9);
    const auto spec = agents::language_model_spec(d.sizes, d.vocab);
    Graph g(false);
    const auto l = structural_loss(g, lm, spec, Tensor::Zero(3, 1), {{a}, {b}, {b}});
    const double entropy = -(std::log(1.0 / 3.0) + 2.0 * std::log(2.0 / 3.0)) / 3.0;
    CHECK(l.sequence_nll.scalar() == doctest::Approx(entropy).epsilon(0.03));
}

TEST_CASE("phase dependencies and configuration errors") {
    const auto& t = toy();
    Pretrained none;
    none.fixed_listener = t.pre.fixed_listener;
    for (auto v : {SpeakerVariant::poe_reranker, SpeakerVariant::noisy_channel,
                   SpeakerVariant::finetuned, SpeakerVariant::multitask,
                   SpeakerVariant::captioner_greedy}) {
        try {
            run_phase(t.data, none, v, quick(), 1);
            FAIL("expected a dependency error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::dependency);
        }
    }
    Pretrained no_listener;
    no_listener.captioner = t.pre.captioner;
    CHECK_THROWS_AS(run_phase(t.data, no_listener, SpeakerVariant::emergent, quick(), 1), Error);

    auto fixed = quick();
    fixed.listener = agents::ListenerRegime::fixed;
    CHECK_THROWS_AS(run_phase(t.data, t.pre, SpeakerVariant::emergent, fixed, 1), Error);
    auto negative = quick();
    negative.kl_weight = -0.1;
    CHECK_THROWS_AS(run_phase(t.data, t.pre, SpeakerVariant::finetuned, negative, 1), Error);
    CHECK(parse_unfreeze("both_adapters") == UnfreezeSet::both_adapters);
    CHECK_THROWS_AS(parse_unfreeze("everything"), Error);
}

TEST_CASE("reranker training never touches the captioner; unfreeze sets control the adapters") {
    const auto& t = toy();
    const uint64_t lstm = t.pre.captioner->group_checksum(agents::kSpeakerLstm);
    const uint64_t adapter = t.pre.captioner->group_checksum(agents::kSpeakerAdapter);
    const uint64_t listener_adapter = t.pre.fixed_listener->group_checksum(agents::kListenerAdapter);
    for (auto v : {SpeakerVariant::poe_reranker, SpeakerVariant::noisy_channel}) {
        for (auto u : {UnfreezeSet::rerank_only, UnfreezeSet::speaker_adapter,
                       UnfreezeSet::both_adapters}) {
            auto cfg = quick();
            cfg.unfreeze = u;
            const auto res = run_phase(t.data, t.pre, v, cfg, 4);
            CHECK(res.speaker.params.group_checksum(agents::kSpeakerLstm) == lstm);
            const bool speaker_moved = res.speaker.params.group_checksum(agents::kSpeakerAdapter) != adapter;
            const bool listener_moved =
                res.listener.group_checksum(agents::kListenerAdapter) != listener_adapter;
            CHECK(speaker_moved == (u != UnfreezeSet::rerank_only));
            CHECK(listener_moved == (u == UnfreezeSet::both_adapters));
        }
    }
    // The pretrained stores themselves are untouched and stay frozen.
    CHECK(t.pre.fixed_listener->group_frozen(agents::kListenerLstm));
    CHECK(t.pre.language_model->group_frozen(agents::kLanguageModel));
}

TEST_CASE("warm-started joint listeners begin as the fixed listener and keep learning") {
    const auto& t = toy();
    const uint64_t fixed_lstm = t.pre.fixed_listener->group_checksum(agents::kListenerLstm);
    auto cfg = quick(0);
    cfg.listener_warm_start = true;
    const auto start = run_phase(t.data, t.pre, SpeakerVariant::poe_reranker, cfg, 4);
    CHECK(start.listener.group_checksum(agents::kListenerLstm) == fixed_lstm);
    CHECK_FALSE(start.listener.group_frozen(agents::kListenerLstm));
    CHECK(start.listener.group_frozen(agents::kListenerAdapter));

    cfg.episodes = 3;
    const auto trained = run_phase(t.data, t.pre, SpeakerVariant::poe_reranker, cfg, 4);
    CHECK(trained.listener.group_checksum(agents::kListenerLstm) != fixed_lstm);
    CHECK(t.pre.fixed_listener->group_checksum(agents::kListenerLstm) == fixed_lstm);

    // Emergent speakers use their own symbols, so their listener always starts fresh.
    const auto emergent = run_phase(t.data, t.pre, SpeakerVariant::emergent, quick(0), 4);
    CHECK(emergent.listener.group_checksum(agents::kListenerLstm) != fixed_lstm);
    cfg.episodes = 0;
    const auto emergent_warm = run_phase(t.data, t.pre, SpeakerVariant::emergent, cfg, 4);
    CHECK(emergent_warm.listener.group_checksum(agents::kListenerLstm) ==
          emergent.listener.group_checksum(agents::kListenerLstm));

    auto fresh = quick(0);
    const auto cold = run_phase(t.data, t.pre, SpeakerVariant::poe_reranker, fresh, 4);
    CHECK(cold.listener.group_checksum(agents::kListenerLstm) != fixed_lstm);
}

TEST_CASE("finetuning moves the captioner copy but not the pretrained original") {
    const auto& t = toy();
    const uint64_t before = t.pre.captioner->checksum();
    const auto res = run_phase(t.data, t.pre, SpeakerVariant::finetuned, quick(), 2);
    CHECK(res.speaker.params.checksum() != before);
    CHECK(t.pre.captioner->checksum() == before);
}

TEST_CASE("training a phase is deterministic for a seed and logs metrics") {
    const auto& t = toy();
    MetricsLog a, b;
    const auto r1 = run_phase(t.data, t.pre, SpeakerVariant::emergent, quick(60), 11, &a);
    const auto r2 = run_phase(t.data, t.pre, SpeakerVariant::emergent, quick(60), 11, &b);
    CHECK(r1.speaker.params.checksum() == r2.speaker.params.checksum());
    CHECK(r1.listener.checksum() == r2.listener.checksum());
    REQUIRE(a.rows().size() == 2);
    CHECK(a.rows()[0].step == 50);
    CHECK(a.rows()[1].step == 60);
    CHECK(a.rows()[0].reward == b.rows()[0].reward);
}

TEST_CASE("gold candidates carry captioner scores and mask padding") {
    const auto& t = toy();
    SpeakerPolicy sp;
    sp.params = *t.pre.captioner;
    const auto inst = std::vector<world::ReferentialInstance>(t.data.splits.easy.begin(),
                                                              t.data.splits.easy.begin() + 3);
    const CandidateSet c = gold_candidates(sp, t.data, inst);
    const auto spec = agents::captioner_spec(t.data.sizes, t.data.vocab);
    for (size_t i = 0; i < inst.size(); ++i) {
        const auto& caps = t.data.corpus.captions_of(inst[i].target);
        for (int k = 0; k < c.per_instance; ++k) {
            const auto& m = c.messages[i * c.per_instance + k];
            if (k < static_cast<int>(caps.size())) {
                CHECK(c.bias(static_cast<long>(i), k) == 0.0);
                const double s = agents::score_messages(
                    sp.params, spec, agents::feature_rows({&t.data.u(inst[i].target)}), {m})[0];
                CHECK(c.base_logprobs(static_cast<long>(i), k) == doctest::Approx(s).epsilon(1e-12));
            } else {
                CHECK(c.bias(static_cast<long>(i), k) < -1e8);
            }
        }
    }
}

TEST_CASE("speak is deterministic for argmax variants and respects the batch order") {
    const auto& t = toy();
    const auto res = run_phase(t.data, t.pre, SpeakerVariant::captioner_greedy, quick(), 1);
    Rng r1(1), r2(2);
    const auto a = speak(res.speaker, t.data, t.data.splits.difficult, r1);
    const auto b = speak(res.speaker, t.data, t.data.splits.difficult, r2);
    REQUIRE(a.size() == t.data.splits.difficult.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].tokens == b[i].tokens);
}
