#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "rerank_oracle.hpp"
#include "refgame/agents.hpp"
#include "refgame/error.hpp"

using namespace refgame;
using namespace refgame::agents;

namespace {

struct Fixture {
    world::Catalog cat;
    Vocabulary vocab{cat, 20};
    Sizes sizes;
    world::Corpus corpus = world::generate_corpus(60, 3, cat);

    Fixture() {
        sizes.feature_dim = world::FeatureLayout(cat).dimension;
        sizes.adapter_dim = 12;
        sizes.word_dim = 8;
        sizes.hidden = 10;
        sizes.listener_dim = 9;
        sizes.rerank_word_dim = 7;
        sizes.message_embed = 11;
    }

    std::vector<double> features(int64_t id) const {
        return world::encode_scene(corpus.scene(id), cat);
    }

    Message random_caption_message(Rng& rng, int max_len = 8) const {
        Message m;
        const int len = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(max_len)));
        for (int i = 0; i < len; ++i)
            m.tokens.push_back(2 + static_cast<int>(rng.below(vocab.caption_size() - 2)));
        m.text = vocab.detokenize(m.tokens);
        m.eos_terminated = true;
        return m;
    }
};

SpeakerPolicy make_policy(const Fixture& f, SpeakerVariant v, uint64_t seed) {
    SpeakerPolicy p;
    p.variant = v;
    Rng rng(seed);
    if (v == SpeakerVariant::emergent) {
        init_decoder(p.params, emergent_spec(f.sizes, f.vocab), f.sizes, rng);
    } else {
        init_decoder(p.params, captioner_spec(f.sizes, f.vocab), f.sizes, rng);
        init_reranker(p.params, f.sizes, f.vocab, rng);
    }
    return p;
}

world::Caption caption_of(const std::vector<std::string>& words) {
    world::Caption c;
    c.tokens = words;
    return c;
}

Eigen::RowVectorXd row_of(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<long>(v.size()));
}

}  // namespace

TEST_CASE("vocabulary keeps caption words and emergent symbols disjoint") {
    Fixture f;
    CHECK(f.vocab.word(Vocabulary::kEos) == "<eos>");
    CHECK(f.vocab.emergent_size() == 20);
    for (int i = 0; i < f.vocab.size(); ++i)
        CHECK(f.vocab.is_caption_token(i) != f.vocab.is_emergent_token(i));
    const auto ids = f.vocab.encode({"jenny", "is", "scared", "of", "the", "bear"});
    CHECK(f.vocab.detokenize(ids) == "jenny is scared of the bear");
    CHECK(f.vocab.is_stopword(f.vocab.id("the")));
    CHECK_FALSE(f.vocab.is_stopword(f.vocab.id("bear")));
    CHECK_THROWS_AS(f.vocab.encode({"s3"}), Error);
}

TEST_CASE("listener choice: symmetry, closed-form softmax, shift invariance") {
    auto tie = choose_from_scores({0.7, 0.7});
    CHECK(tie.choice == 0);
    CHECK(tie.distribution[0] == doctest::Approx(0.5).epsilon(1e-12));

    auto c = choose_from_scores({2.0, 1.0});
    const double z = std::exp(2.0) + std::exp(1.0);
    CHECK(c.choice == 0);
    CHECK(std::abs(c.distribution[0] - std::exp(2.0) / z) < 1e-12);
    CHECK(std::abs(c.distribution[1] - std::exp(1.0) / z) < 1e-12);

    auto shifted = choose_from_scores({1.0 + 5.0, 3.0 + 5.0, -2.0 + 5.0});
    CHECK(shifted.choice == choose_from_scores({1.0, 3.0, -2.0}).choice);

    CHECK(reward_for(1, 1) == 1);
    CHECK(reward_for(0, 1) == -1);

    Fixture f;
    ParamStore l;
    Rng rng(4);
    init_listener(l, f.sizes, f.vocab, rng);
    const auto u = f.features(0);
    Message m;
    m.tokens = f.vocab.encode({"the", "bear"});
    auto same = listener_choose(l, m, {u, u});
    CHECK(same.choice == 0);
    CHECK(std::abs(same.distribution[0] - 0.5) < 1e-12);
    CHECK_THROWS_WITH_AS(listener_choose(l, Message{}, {u, u}), "empty message", Error);
}

TEST_CASE("listener distribution matches dot products of its embeddings") {
    Fixture f;
    ParamStore l;
    Rng rng(5);
    init_listener(l, f.sizes, f.vocab, rng);
    const auto u0 = f.features(1), u1 = f.features(2), u2 = f.features(3);
    Message m;
    m.tokens = f.vocab.encode({"mike", "is", "running"});

    // Recompute v with a hand-unrolled LSTM.
    const int h = f.sizes.hidden;
    Eigen::RowVectorXd hs = Eigen::RowVectorXd::Zero(h), cs = hs;
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    for (int t : m.tokens) {
        const Eigen::RowVectorXd x = l.value("listener.embed.table").row(t);
        const Eigen::RowVectorXd gates =
            x * l.value("listener.cell.wx") + hs * l.value("listener.cell.wh") + l.value("listener.cell.b");
        for (int k = 0; k < h; ++k) {
            const double i = sig(gates(k)), fg = sig(gates(h + k)), g = std::tanh(gates(2 * h + k)),
                         o = sig(gates(3 * h + k));
            cs(k) = fg * cs(k) + i * g;
            hs(k) = o * std::tanh(cs(k));
        }
    }
    const Eigen::RowVectorXd v = hs * l.value("listener.out.w") + l.value("listener.out.b");
    std::vector<double> dots;
    for (const auto* u : {&u0, &u1, &u2})
        dots.push_back(v.dot(row_of(*u) * l.value("listener.adapter.w") + l.value("listener.adapter.b")));
    const auto expected = choose_from_scores(dots);
    const auto got = listener_choose(l, m, {u0, u1, u2});
    CHECK(got.choice == expected.choice);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(got.distribution[i] - expected.distribution[i]) < 1e-12);
}

TEST_CASE("emergent speaker: deterministic greedy, re-scorable, emergent tokens only") {
    Fixture f;
    const SpeakerPolicy p = make_policy(f, SpeakerVariant::emergent, 9);
    const auto ut = f.features(4), ud = f.features(5);
    Rng r1(1), r2(2);
    const Message a = speak_emergent(p, f.sizes, f.vocab, ut, ud, true, r1);
    const Message b = speak_emergent(p, f.sizes, f.vocab, ut, ud, true, r2);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens.size() == 10);
    CHECK_FALSE(a.eos_terminated);

    Rng r3(3);
    for (int trial = 0; trial < 10; ++trial) {
        const Message s = speak_emergent(p, f.sizes, f.vocab, ut, ud, false, r3);
        for (int t : s.tokens) CHECK(f.vocab.is_emergent_token(t));
        std::vector<double> u = ut;
        u.insert(u.end(), ud.begin(), ud.end());
        const double rescored =
            score_messages(p.params, emergent_spec(f.sizes, f.vocab), feature_rows({&u}), {s})[0];
        CHECK(std::abs(rescored - s.logprob()) < 1e-9);
        for (double lp : s.token_logprobs) CHECK(std::isfinite(lp));
    }
}

TEST_CASE("caption speaker: sampling limit, best-of-k and re-scoring") {
    Fixture f;
    const SpeakerPolicy p = make_policy(f, SpeakerVariant::captioner_sample, 10);
    const auto u = f.features(6);
    const Message greedy = speak_caption_greedy(p, f.sizes, f.vocab, u);
    Rng rng(1);
    const Message cold = speak_caption_sample(p, f.sizes, f.vocab, u, 1, 1e-6, rng);
    CHECK(cold.tokens == greedy.tokens);
    CHECK(greedy.tokens.size() <= 25);

    // Best-of-k: replay the same draws and re-score every candidate.
    Rng a(77), b(77);
    const Message best = speak_caption_sample(p, f.sizes, f.vocab, u, 20, 2.0, a);
    std::vector<const std::vector<double>*> rows(20, &u);
    const auto cond = feature_rows(rows);
    const auto spec = captioner_spec(f.sizes, f.vocab);
    const auto drawn = decode_samples(p.params, spec, f.vocab, cond, 2.0, b);
    const auto scores = score_messages(p.params, spec, cond, drawn);
    bool found = false;
    for (size_t i = 0; i < drawn.size(); ++i) {
        CHECK(std::abs(scores[i] - drawn[i].logprob()) < 1e-9);
        CHECK(best.logprob() >= scores[i] - 1e-12);
        found = found || drawn[i].tokens == best.tokens;
    }
    CHECK(found);
    for (int t : best.tokens) CHECK(f.vocab.is_caption_token(t));
}

TEST_CASE("teacher forcing rejects tokens outside the decoder vocabulary") {
    Fixture f;
    const SpeakerPolicy p = make_policy(f, SpeakerVariant::captioner_greedy, 11);
    const auto u = f.features(0);
    Graph g(false);
    CHECK_THROWS_AS(decoder_teacher_forced(g, p.params, captioner_spec(f.sizes, f.vocab),
                                           feature_rows({&u}), {{3, 0, 4}}),
                    Error);
    Message emergent;
    emergent.tokens = {f.vocab.emergent_offset() + 2};
    CHECK_THROWS_AS(score_messages(p.params, captioner_spec(f.sizes, f.vocab), feature_rows({&u}),
                                   {emergent}),
                    Error);
}

TEST_CASE("random oracle: single caption, uniform frequencies, target only") {
    Fixture f;
    Rng rng(5);
    const std::vector<world::Caption> one = {caption_of({"mike", "is", "sitting"})};
    CHECK(oracle_random(one, f.vocab, rng).text == "mike is sitting");

    std::vector<world::Caption> six;
    for (const auto& w : {"sitting", "standing", "running", "scared", "waving"})
        six.push_back(caption_of({"mike", "is", w}));
    six.push_back(caption_of({"jenny", "is", "waving"}));
    std::vector<int> counts(6, 0);
    const int draws = 6000;
    for (int i = 0; i < draws; ++i) {
        const Message m = oracle_random(six, f.vocab, rng);
        int hit = -1;
        for (int j = 0; j < 6; ++j)
            if (m.text == six[j].text()) hit = j;
        REQUIRE(hit >= 0);
        ++counts[hit];
    }
    const double p = 1.0 / 6.0, sigma = std::sqrt(draws * p * (1 - p));
    for (int c : counts) CHECK(std::abs(c - draws * p) <= 3 * sigma);
}

TEST_CASE("discriminative oracle matches exhaustive brute force") {
    Fixture f;
    const auto stop = default_stopwords();
    // Zero overlap wins.
    const std::vector<world::Caption> target = {caption_of({"mike", "is", "sitting"}),
                                                caption_of({"the", "tent", "is", "red"})};
    const std::vector<world::Caption> distractor = {caption_of({"mike", "is", "running"})};
    CHECK(discriminative_choice(target, distractor, stop) == 1);

    // 3 x 3 hand-listed overlaps: scores 2/3, 1/2, 1/2 -> earliest minimum (index 1).
    const std::vector<world::Caption> t3 = {caption_of({"mike", "is", "wearing", "the", "hat"}),
                                            caption_of({"the", "ball", "is", "blue"}),
                                            caption_of({"the", "dog", "is", "sitting"})};
    const std::vector<world::Caption> d3 = {caption_of({"mike", "is", "wearing", "a", "cap"}),
                                            caption_of({"the", "ball", "is", "red"}),
                                            caption_of({"the", "dog", "is", "running"})};
    CHECK(discriminative_choice(t3, d3, stop) == 1);

    // All-stop-word captions are excluded; all excluded -> nullopt and random fallback.
    const std::vector<world::Caption> stops = {caption_of({"the", "is"}), caption_of({"a"})};
    CHECK_FALSE(discriminative_choice(stops, d3, stop).has_value());
    Rng rng(1);
    const Message fb = oracle_discriminative(
        {caption_of({"the", "is"}), caption_of({"the", "the"})}, d3, f.vocab, rng);
    CHECK((fb.text == "the is" || fb.text == "the the"));

    // Random instances from the corpus against a direct brute-force argmin.
    const std::set<std::string> st(stop.begin(), stop.end());
    Rng pick(8);
    for (int trial = 0; trial < 200; ++trial) {
        const int64_t a = static_cast<int64_t>(pick.below(60));
        int64_t b = static_cast<int64_t>(pick.below(60));
        if (a == b) b = (b + 1) % 60;
        const auto& tc = f.corpus.captions_of(a);
        const auto& dc = f.corpus.captions_of(b);
        int best = -1;
        double best_score = 2.0;
        for (size_t i = 0; i < tc.size(); ++i) {
            std::vector<std::string> ci;
            for (const auto& w : tc[i].tokens)
                if (!st.count(w) && std::find(ci.begin(), ci.end(), w) == ci.end()) ci.push_back(w);
            if (ci.empty()) continue;
            double worst = 0.0;
            for (const auto& d : dc) {
                int shared = 0;
                for (const auto& w : ci)
                    shared += std::find(d.tokens.begin(), d.tokens.end(), w) != d.tokens.end();
                worst = std::max(worst, shared / static_cast<double>(ci.size()));
            }
            if (worst < best_score) {
                best_score = worst;
                best = static_cast<int>(i);
            }
        }
        CHECK(discriminative_choice(tc, dc, stop) == best);
    }
}

TEST_CASE("bag-of-words embedding: empty bag, order invariance, linearity") {
    Fixture f;
    const SpeakerPolicy p = make_policy(f, SpeakerVariant::poe_reranker, 12);
    Message stops;
    stops.tokens = f.vocab.encode({"the", "is", "a"});
    const auto e0 = bow_embed(p.params, stops, f.vocab);
    const Tensor& b = p.params.value("rr.bow.b");
    for (long i = 0; i < b.cols(); ++i) CHECK(std::abs(e0[i] - std::tanh(b(0, i))) < 1e-12);

    Message m1, m2;
    m1.tokens = f.vocab.encode({"the", "bear", "is", "near", "the", "tree"});
    m2.tokens = f.vocab.encode({"tree", "the", "near", "is", "bear", "the"});
    CHECK(bow_embed(p.params, m1, f.vocab) == bow_embed(p.params, m2, f.vocab));

    // Pre-activation differs by exactly one transformed word vector.
    Message once, twice;
    once.tokens = f.vocab.encode({"the", "dog"});
    twice.tokens = f.vocab.encode({"the", "dog", "dog"});
    Graph g(false);
    const Tensor pre_once = (bag_of_words({&once}, f.vocab) * p.params.value("rr.embed.table")) *
                            p.params.value("rr.bow.w");
    const Tensor pre_twice = (bag_of_words({&twice}, f.vocab) * p.params.value("rr.embed.table")) *
                             p.params.value("rr.bow.w");
    const Tensor word = p.params.value("rr.embed.table").row(f.vocab.id("dog")) * p.params.value("rr.bow.w");
    CHECK((pre_twice - pre_once - word).cwiseAbs().maxCoeff() < 1e-12);

    int skipped = 0;
    Message odd;
    odd.tokens = {Vocabulary::kUnk, f.vocab.emergent_offset(), f.vocab.id("dog")};
    bow_embed(p.params, odd, f.vocab, &skipped);
    CHECK(skipped == 2);
}

TEST_CASE("PoE combination rule: degenerate cases and hand-set oracle") {
    const std::vector<double> base = {-1.0, -2.0, -3.0};
    auto uniform = poe_policy_from_scores({0.3, 0.3, 0.3}, base, 1.0, 0.0);
    for (double x : uniform) CHECK(std::abs(x - 1.0 / 3.0) < 1e-12);

    auto prior_only = poe_policy_from_scores({0.5, 0.2, 0.1}, base, 0.0, 1.0);
    const double zb = std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(prior_only[i] - std::exp(base[i]) / zb) < 1e-12);

    auto both = poe_policy_from_scores({0.5, 0.2, 0.1}, base, 1.0, 1.0);
    const double zt = std::exp(0.5) + std::exp(0.2) + std::exp(0.1);
    std::vector<double> w = {std::exp(0.5) / zt * std::exp(-1.0) / zb,
                             std::exp(0.2) / zt * std::exp(-2.0) / zb,
                             std::exp(0.1) / zt * std::exp(-3.0) / zb};
    const double zw = w[0] + w[1] + w[2];
    for (int i = 0; i < 3; ++i) CHECK(std::abs(both[i] - w[i] / zw) < 1e-9);

    // Adding a constant to every task logit leaves the argmax unchanged.
    auto shifted = poe_policy_from_scores({3.5, 3.2, 3.1}, base, 1.0, 1.0);
    CHECK(argmax_lowest(shifted) == argmax_lowest(both));
}

TEST_CASE("noisy-channel combination rule: symmetry and hand-set Bayes oracle") {
    const std::vector<double> prior = {-0.5, -1.5};
    auto sym = noisy_channel_policy_from_scores({{0.4, 0.4}, {1.1, 1.1}}, 0, prior);
    const double z = std::exp(-0.5) + std::exp(-1.5);
    CHECK(std::abs(sym[0] - std::exp(-0.5) / z) < 1e-12);

    // p(t=1|s) from image scores, times prior, renormalised.
    const std::vector<std::vector<double>> scores = {{0.2, 1.0}, {0.9, -0.3}};
    auto nc = noisy_channel_policy_from_scores(scores, 1, prior);
    const double l0 = std::exp(1.0) / (std::exp(0.2) + std::exp(1.0));
    const double l1 = std::exp(-0.3) / (std::exp(0.9) + std::exp(-0.3));
    const double w0 = l0 * std::exp(-0.5) / z, w1 = l1 * std::exp(-1.5) / z;
    CHECK(std::abs(nc[0] - w0 / (w0 + w1)) < 1e-9);
    CHECK(std::abs(nc[1] - w1 / (w0 + w1)) < 1e-9);
}

TEST_CASE("learned rerankers match brute-force distributions on random candidate sets") {
    Fixture f;
    SpeakerPolicy p = make_policy(f, SpeakerVariant::poe_reranker, 13);
    p.rerank.lambda_s = 1.0;
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Candidate> cands;
        std::vector<double> base;
        std::vector<const Message*> msgs;
        for (int i = 0; i < 20; ++i) {
            cands.push_back({f.random_caption_message(rng), rng.uniform(-30.0, -2.0)});
            base.push_back(*cands.back().base_logprob);
        }
        for (const auto& c : cands) msgs.push_back(&c.message);
        const Tensor counts = bag_of_words(msgs, f.vocab);
        const auto ut = f.features(static_cast<int64_t>(rng.below(60)));
        const auto ud = f.features(static_cast<int64_t>(rng.below(60)));

        Rng unused(0);
        const auto poe = poe_rerank(p, f.vocab, cands, ut, ud, true, unused);
        const auto oracle = rerank_oracle::poe(p.params, counts, row_of(ut), row_of(ud), base, 1.0, 1.0);
        double total = 0.0;
        for (int i = 0; i < 20; ++i) {
            CHECK(std::abs(poe.policy[i] - oracle[i]) < 1e-9);
            total += poe.policy[i];
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
        CHECK(poe.chosen == argmax_lowest(poe.policy));

        const int t = trial % 2;
        const std::vector<std::vector<double>> images = t == 0 ? std::vector{ut, ud} : std::vector{ud, ut};
        const auto nc = noisy_channel_rerank(p, f.vocab, cands, images, t, true, unused);
        const auto nc_oracle = rerank_oracle::noisy_channel(
            p.params, counts, {row_of(images[0]), row_of(images[1])}, t, base);
        for (int i = 0; i < 20; ++i) CHECK(std::abs(nc.policy[i] - nc_oracle[i]) < 1e-9);

        // Permuting the candidates permutes the distribution.
        std::vector<int> perm(20);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<Candidate> permuted;
        for (int i : perm) permuted.push_back(cands[i]);
        const auto pp = poe_rerank(p, f.vocab, permuted, ut, ud, true, unused);
        for (int i = 0; i < 20; ++i) CHECK(std::abs(pp.policy[i] - poe.policy[perm[i]]) < 1e-12);
    }
}

TEST_CASE("reranker degenerate cases on the learned path") {
    Fixture f;
    SpeakerPolicy p = make_policy(f, SpeakerVariant::noisy_channel, 14);
    Rng rng(3), unused(0);
    std::vector<Candidate> cands;
    for (int i = 0; i < 5; ++i) cands.push_back({f.random_caption_message(rng), -1.0 - i});
    const auto u = f.features(7);
    const double z = [] {
        double s = 0;
        for (int i = 0; i < 5; ++i) s += std::exp(-1.0 - i);
        return s;
    }();

    // Identical images: p(t|s,u) = 1/2 for every s, so pi is the prior.
    const auto nc = noisy_channel_rerank(p, f.vocab, cands, {u, u}, 1, true, unused);
    for (int i = 0; i < 5; ++i) CHECK(std::abs(nc.policy[i] - std::exp(-1.0 - i) / z) < 1e-12);

    // Zero combine layer: equal task scores, uniform pi when lambda_s = 0.
    p.params.mutable_value("rr.combine.w").setZero();
    p.params.mutable_value("rr.combine.b").setZero();
    p.rerank.lambda_s = 0.0;
    const auto flat = poe_rerank(p, f.vocab, cands, u, f.features(8), true, unused);
    for (double x : flat.policy) CHECK(std::abs(x - 0.2) < 1e-12);
    CHECK(flat.chosen == 0);
    p.rerank.lambda_f = 0.0;
    p.rerank.lambda_s = 1.0;
    const auto prior = poe_rerank(p, f.vocab, cands, u, f.features(8), true, unused);
    for (int i = 0; i < 5; ++i) CHECK(std::abs(prior.policy[i] - std::exp(-1.0 - i) / z) < 1e-12);

    cands[2].base_logprob.reset();
    CHECK_THROWS_AS(poe_rerank(p, f.vocab, cands, u, u, true, unused), Error);
    CHECK_THROWS_AS(noisy_channel_rerank(p, f.vocab, cands, {u, u}, 0, true, unused), Error);
}

// Composite graphs have entries with gradients near 1e-7, where h = 1e-5
// central differences are dominated by round-off; h = 1e-4 is used here.
TEST_CASE("agent graphs pass finite-difference checks") {
    Fixture f;
    SpeakerPolicy p = make_policy(f, SpeakerVariant::poe_reranker, 15);
    Rng rng(6);
    const auto u0 = f.features(10), u1 = f.features(11);
    const std::vector<std::vector<int>> seqs = {{3, 5, 7}, {4}};
    const auto spec = captioner_spec(f.sizes, f.vocab);
    const Tensor cond = feature_rows({&u0, &u1});

    SUBCASE("captioner teacher forcing") {
        auto build = [&](Graph& g, const ParamStore& s) {
            return nn::mean(decoder_teacher_forced(g, s, spec, cond, seqs).sequence_logprob);
        };
        Graph g;
        g.backward(build(g, p.params));
        const auto r = fd::check(p.params, g.param_gradients(), [&](const ParamStore& s) {
            Graph e(false);
            return build(e, s).scalar();
        }, 1e-4);
        INFO(r.worst);
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("listener and rerankers") {
        ParamStore l;
        init_listener(l, f.sizes, f.vocab, rng);
        const std::vector<Tensor> feats = {cond, feature_rows({&u1, &u0})};
        auto build_l = [&](Graph& g, const ParamStore& s) {
            return nn::cross_entropy(
                listener_log_probs(g, s, {{3, 8, 9}, {f.vocab.emergent_offset() + 1}}, feats),
                std::vector<int>{0, 1});
        };
        Graph gl;
        gl.backward(build_l(gl, l));
        CHECK(fd::check(l, gl.param_gradients(), [&](const ParamStore& s) {
                  Graph e(false);
                  return build_l(e, s).scalar();
              }, 1e-4).max_rel_error < 1e-4);

        std::vector<Message> msgs;
        for (int i = 0; i < 6; ++i) msgs.push_back(f.random_caption_message(rng, 5));
        std::vector<const Message*> ptrs;
        for (const auto& m : msgs) ptrs.push_back(&m);
        RerankBatch batch;
        batch.counts = bag_of_words(ptrs, f.vocab);
        batch.base_logprobs = Tensor::Random(2, 3);
        batch.candidate_features = feats;
        batch.target_index = {0, 1};
        auto build_r = [&](Graph& g, const ParamStore& s) {
            Var a = nn::pick(poe_log_policy(g, s, batch, 1.0, 1.0), std::vector<int>{2, 0});
            Var b = nn::pick(noisy_channel_log_policy(g, s, batch), std::vector<int>{1, 1});
            return nn::sum(nn::add(a, b));
        };
        Graph gr;
        gr.backward(build_r(gr, p.params));
        CHECK(fd::check(p.params, gr.param_gradients(), [&](const ParamStore& s) {
                  Graph e(false);
                  return build_r(e, s).scalar();
              }, 1e-4).max_rel_error < 1e-4);
    }
}
