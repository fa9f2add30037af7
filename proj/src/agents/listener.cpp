#include <cmath>

#include "refgame/agents.hpp"
#include "refgame/error.hpp"

namespace refgame::agents {

void init_listener(ParamStore& store, const Sizes& sizes, const Vocabulary& vocab, Rng& rng) {
    nn::add_embedding(store, "listener.embed", kListenerLstm, vocab.size(), sizes.word_dim, rng);
    nn::add_lstm(store, "listener.cell", kListenerLstm, sizes.word_dim, sizes.hidden, rng);
    nn::add_dense(store, "listener.out", kListenerLstm, sizes.hidden, sizes.listener_dim, rng);
    nn::add_dense(store, "listener.adapter", kListenerAdapter, sizes.feature_dim,
                  sizes.listener_dim, rng);
}

Var listener_scores(Graph& g, const ParamStore& store,
                    const std::vector<std::vector<int>>& messages,
                    const std::vector<Tensor>& candidate_features) {
    const int batch = static_cast<int>(messages.size());
    require(batch > 0, ErrorCode::invalid_argument, "empty listener batch");
    require(candidate_features.size() >= 2, ErrorCode::invalid_argument,
            "listener needs at least two candidates");
    const int vocab = static_cast<int>(store.value("listener.embed.table").rows());
    size_t steps = 0;
    for (const auto& m : messages) {
        require(!m.empty(), ErrorCode::invalid_argument, "empty message");
        for (int t : m)
            require(t >= 0 && t < vocab, ErrorCode::invalid_argument,
                    "token " + std::to_string(t) + " outside the listener vocabulary");
        steps = std::max(steps, m.size());
    }
    nn::LstmState state =
        nn::lstm_zero_state(g, batch, nn::lstm_hidden(store, "listener.cell"));
    for (size_t t = 0; t < steps; ++t) {
        std::vector<int> ids(batch, 0);
        Tensor mask(batch, 1);
        bool all = true;
        for (int b = 0; b < batch; ++b) {
            const bool on = t < messages[b].size();
            ids[b] = on ? messages[b][t] : 0;
            mask(b, 0) = on ? 1.0 : 0.0;
            all = all && on;
        }
        Var x = nn::embed(g, store, "listener.embed", ids);
        state = all ? nn::lstm_step(g, store, "listener.cell", x, state)
                    : nn::lstm_masked_step(g, store, "listener.cell", x, state, g.constant(mask));
    }
    Var v = nn::dense(g, store, "listener.out", state.h);
    std::vector<Var> scores;
    for (const auto& u : candidate_features) {
        require(u.rows() == batch, ErrorCode::shape_mismatch,
                "candidate features must have one row per message");
        scores.push_back(nn::row_dot(v, nn::dense(g, store, "listener.adapter", g.constant(u))));
    }
    return nn::concat_cols(scores);
}

Var listener_log_probs(Graph& g, const ParamStore& store,
                       const std::vector<std::vector<int>>& messages,
                       const std::vector<Tensor>& candidate_features) {
    return nn::log_softmax(listener_scores(g, store, messages, candidate_features));
}

int argmax_lowest(const std::vector<double>& values) {
    require(!values.empty(), ErrorCode::invalid_argument, "argmax of an empty vector");
    int best = 0;
    for (size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = static_cast<int>(i);
    return best;
}

ListenerChoice choose_from_scores(const std::vector<double>& scores) {
    require(scores.size() >= 2, ErrorCode::invalid_argument, "need at least two candidates");
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    ListenerChoice out;
    double z = 0.0;
    for (double s : scores) {
        out.distribution.push_back(std::exp(s - mx));
        z += out.distribution.back();
    }
    for (double& p : out.distribution) p /= z;
    out.choice = argmax_lowest(scores);
    return out;
}

ListenerChoice listener_choose(const ParamStore& listener, const Message& message,
                               const std::vector<std::vector<double>>& candidate_features) {
    require(!message.tokens.empty(), ErrorCode::invalid_argument, "empty message");
    std::vector<Tensor> feats;
    for (const auto& f : candidate_features) feats.push_back(feature_rows({&f}));
    Graph g(false);
    const Tensor s = listener_scores(g, listener, {message.tokens}, feats).value();
    return choose_from_scores(std::vector<double>(s.data(), s.data() + s.cols()));
}

}  // namespace refgame::agents
