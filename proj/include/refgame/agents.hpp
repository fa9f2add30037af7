#pragma once

// Speakers (recurrent decoders, oracles, rerankers) and listeners.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refgame/nn.hpp"
#include "refgame/world.hpp"

namespace refgame::agents {

using nn::Graph;
using nn::ParamStore;
using nn::Tensor;
using nn::Var;

// Group names used for freezing.
inline constexpr const char* kSpeakerAdapter = "speaker.adapter";
inline constexpr const char* kSpeakerLstm = "speaker.lstm";
inline constexpr const char* kListenerAdapter = "listener.adapter";
inline constexpr const char* kListenerLstm = "listener.lstm";
inline constexpr const char* kRerank = "rerank";
inline constexpr const char* kLanguageModel = "lm";

// Token space shared by all agents: caption words first (id 0 is <eos>,
// id 1 is <unk>), then the emergent symbols s0..s{E-1}.
class Vocabulary {
public:
    Vocabulary(const world::Catalog& catalog, int emergent_symbols);

    static constexpr int kEos = 0;
    static constexpr int kUnk = 1;

    int size() const { return static_cast<int>(words_.size()); }
    int caption_size() const { return caption_size_; }
    int emergent_size() const { return size() - caption_size_; }
    int emergent_offset() const { return caption_size_; }
    bool is_caption_token(int id) const { return id >= 0 && id < caption_size_; }
    bool is_emergent_token(int id) const { return id >= caption_size_ && id < size(); }

    const std::string& word(int id) const;
    // -1 when unknown.
    int id(std::string_view word) const;
    // Caption words to ids; throws invalid_argument on an unknown word.
    std::vector<int> encode(const std::vector<std::string>& words) const;
    std::string detokenize(const std::vector<int>& ids) const;

    const std::vector<std::string>& stopwords() const { return stopwords_; }
    bool is_stopword(int id) const;

private:
    std::vector<std::string> words_;
    int caption_size_ = 0;
    std::vector<std::string> stopwords_;
    std::vector<bool> stop_mask_;
};

std::vector<std::string> default_stopwords();

struct Message {
    std::vector<int> tokens;  // without the trailing <eos>
    std::string text;
    std::vector<double> token_logprobs;  // includes the <eos> step when eos_terminated
    bool eos_terminated = false;

    double logprob() const;
};

enum class SpeakerVariant {
    emergent,
    captioner_greedy,
    captioner_sample,
    finetuned,
    multitask,
    poe_reranker,
    noisy_channel,
    oracle_random,
    oracle_discriminative,
};

const char* variant_name(SpeakerVariant v);
SpeakerVariant parse_variant(std::string_view name);

struct Sizes {
    int feature_dim = 0;        // world feature vector length
    int adapter_dim = 64;       // scene adapter output
    int word_dim = 32;
    int hidden = 64;            // LSTM hidden size (speaker and listener)
    int listener_dim = 64;      // listener message/scene embedding size
    int rerank_word_dim = 32;
    int message_embed = 64;     // reranker bag-of-words embedding size
    int emergent_vocab = 20;
    int emergent_length = 10;
    int max_caption_length = world::kMaxCaptionTokens;
};

// ---- recurrent decoders --------------------------------------------------------

// A conditional LSTM decoder: scene vector -> adapter (tanh) -> LSTM fed
// [token embedding; adapter output] at every step -> output logits.
struct DecoderSpec {
    std::string prefix;         // parameter name prefix
    std::string adapter_group;
    std::string lstm_group;
    int cond_dim = 0;
    int output_vocab = 0;       // local output ids
    int token_offset = 0;       // local id + offset = Vocabulary id
    int max_length = 0;
    bool has_eos = true;        // local id 0 terminates

    int bos() const { return output_vocab; }  // extra input-embedding row
};

DecoderSpec captioner_spec(const Sizes& sizes, const Vocabulary& vocab);
DecoderSpec language_model_spec(const Sizes& sizes, const Vocabulary& vocab);
DecoderSpec emergent_spec(const Sizes& sizes, const Vocabulary& vocab);

void init_decoder(ParamStore& store, const DecoderSpec& spec, const Sizes& sizes, Rng& rng);

// Teacher-forced scoring. `sequences` hold local ids; when spec.has_eos an
// <eos> step is scored after each sequence unless `eos_terminated` says
// the sequence was cut at the length cap instead.
struct TeacherForced {
    Var sequence_logprob;             // [B x 1]
    std::vector<Var> step_log_probs;  // per step [B x V] log-distribution
    Tensor mask;                      // [B x T]
    std::vector<std::vector<int>> targets;  // per step, per row local target
};
TeacherForced decoder_teacher_forced(Graph& g, const ParamStore& store, const DecoderSpec& spec,
                                     const Tensor& cond,
                                     const std::vector<std::vector<int>>& sequences,
                                     const std::vector<bool>* eos_terminated = nullptr);

// Ancestral sampling recorded on `g` (gradients flow when g has them).
// Returned sequences are local ids without <eos>.
struct Rollout {
    std::vector<std::vector<int>> sequences;
    std::vector<bool> eos_terminated;
    std::vector<Var> step_log_probs;  // untempered [B x V]
    std::vector<std::vector<int>> step_tokens;
    Tensor mask;                      // [B x T]
    Var sequence_logprob;             // [B x 1]
};
Rollout decoder_rollout(Graph& g, const ParamStore& store, const DecoderSpec& spec,
                        const Tensor& cond, double temperature, bool greedy, Rng& rng);

Message to_message(const std::vector<int>& local, const std::vector<double>& step_logprobs,
                   bool eos_terminated, const DecoderSpec& spec, const Vocabulary& vocab);

// Decoder batch helpers (no gradients).
std::vector<Message> decode_greedy(const ParamStore& store, const DecoderSpec& spec,
                                   const Vocabulary& vocab, const Tensor& cond);
std::vector<Message> decode_samples(const ParamStore& store, const DecoderSpec& spec,
                                    const Vocabulary& vocab, const Tensor& cond,
                                    double temperature, Rng& rng);
// Sequence log-prob of each message under the decoder (row i of `cond`
// conditions message i). Tokens outside the decoder's range throw.
std::vector<double> score_messages(const ParamStore& store, const DecoderSpec& spec,
                                   const Tensor& cond, const std::vector<Message>& messages);
// Global ids -> decoder-local ids; -1 for tokens the decoder cannot emit.
std::vector<int> to_local(const std::vector<int>& tokens, const DecoderSpec& spec);

// ---- speakers ------------------------------------------------------------------

struct DecodingConfig {
    int samples = 20;          // k
    double temperature = 2.0;  // tau
};

struct RerankConfig {
    int candidates = 20;        // |S|
    double lambda_f = 1.0;
    double lambda_s = 0.0;
    double sample_temperature = 1.0;
    bool gold_candidates = false;  // rerank the target's ground-truth captions
};

struct SpeakerPolicy {
    SpeakerVariant variant = SpeakerVariant::captioner_greedy;
    ParamStore params;
    DecodingConfig decoding;
    RerankConfig rerank;
};

Tensor feature_rows(const std::vector<const std::vector<double>*>& rows);

Message speak_emergent(const SpeakerPolicy& policy, const Sizes& sizes, const Vocabulary& vocab,
                       const std::vector<double>& target, const std::vector<double>& distractor,
                       bool greedy, Rng& rng);
Message speak_caption_greedy(const SpeakerPolicy& policy, const Sizes& sizes,
                             const Vocabulary& vocab, const std::vector<double>& target);
// k temperature-tau samples; returns the one with the highest untempered
// log-probability (ties -> first drawn).
Message speak_caption_sample(const SpeakerPolicy& policy, const Sizes& sizes,
                             const Vocabulary& vocab, const std::vector<double>& target, int k,
                             double tau, Rng& rng);

Message caption_message(const world::Caption& caption, const Vocabulary& vocab);

Message oracle_random(const std::vector<world::Caption>& target_captions,
                      const Vocabulary& vocab, Rng& rng);
// Index of the target caption with least normalised content-word overlap
// with any distractor caption; nullopt when every caption is all stop words.
std::optional<int> discriminative_choice(const std::vector<world::Caption>& target_captions,
                                         const std::vector<world::Caption>& distractor_captions,
                                         const std::vector<std::string>& stopwords);
Message oracle_discriminative(const std::vector<world::Caption>& target_captions,
                              const std::vector<world::Caption>& distractor_captions,
                              const Vocabulary& vocab, Rng& rng);

// ---- rerankers -------------------------------------------------------------------

struct Candidate {
    Message message;
    std::optional<double> base_logprob;  // log p(s | u_t) under the base captioner
};

struct RerankResult {
    int chosen = 0;
    std::vector<double> policy;  // pi over candidate positions
};

void init_reranker(ParamStore& store, const Sizes& sizes, const Vocabulary& vocab, Rng& rng);

// Content-word counts per message [N x caption_size]; stop words, unknown
// and emergent tokens are skipped (and counted in `skipped` when given).
Tensor bag_of_words(const std::vector<const Message*>& messages, const Vocabulary& vocab,
                    int* skipped = nullptr);
Var bow_embed(Graph& g, const ParamStore& store, const Tensor& counts);
std::vector<double> bow_embed(const ParamStore& store, const Message& message,
                              const Vocabulary& vocab, int* skipped = nullptr);

// Batched reranker log-policy. Candidates are grouped per instance:
// rows [b*N, (b+1)*N) of `counts` belong to instance b.
struct RerankBatch {
    Tensor counts;          // [B*N x caption_size]
    Tensor base_logprobs;   // [B x N]
    std::vector<Tensor> candidate_features;  // C tensors [B x F] in candidate order
    std::vector<int> target_index;           // [B]
    Tensor bias;  // optional [B x N] added before normalisation (padding masks)
};
Var poe_log_policy(Graph& g, const ParamStore& store, const RerankBatch& batch, double lambda_f,
                   double lambda_s);
Var noisy_channel_log_policy(Graph& g, const ParamStore& store, const RerankBatch& batch);

// The same combination rules from raw scores: PoE from task scores and
// base log-probs; noisy channel from per-candidate image scores [N][C].
std::vector<double> poe_policy_from_scores(const std::vector<double>& task,
                                           const std::vector<double>& base, double lambda_f,
                                           double lambda_s);
std::vector<double> noisy_channel_policy_from_scores(
    const std::vector<std::vector<double>>& image_scores, int target,
    const std::vector<double>& base);

// Single-instance wrappers; `greedy` picks argmax (lowest index on ties),
// otherwise samples from pi.
RerankResult poe_rerank(const SpeakerPolicy& policy, const Vocabulary& vocab,
                        const std::vector<Candidate>& candidates,
                        const std::vector<double>& target, const std::vector<double>& distractor,
                        bool greedy, Rng& rng);
RerankResult noisy_channel_rerank(const SpeakerPolicy& policy, const Vocabulary& vocab,
                                  const std::vector<Candidate>& candidates,
                                  const std::vector<std::vector<double>>& candidate_features,
                                  int target_index, bool greedy, Rng& rng);

// ---- listener ----------------------------------------------------------------------

enum class ListenerRegime { joint, fixed };
const char* regime_name(ListenerRegime r);

void init_listener(ParamStore& store, const Sizes& sizes, const Vocabulary& vocab, Rng& rng);

// Dot products dot(v, adapter(u_c)) [B x C]; messages[b] are Vocabulary ids.
Var listener_scores(Graph& g, const ParamStore& store,
                    const std::vector<std::vector<int>>& messages,
                    const std::vector<Tensor>& candidate_features);
Var listener_log_probs(Graph& g, const ParamStore& store,
                       const std::vector<std::vector<int>>& messages,
                       const std::vector<Tensor>& candidate_features);

struct ListenerChoice {
    int choice = 0;
    std::vector<double> distribution;
};

int argmax_lowest(const std::vector<double>& values);

ListenerChoice listener_choose(const ParamStore& listener, const Message& message,
                               const std::vector<std::vector<double>>& candidate_features);
// Choice from precomputed dot products (softmax, lowest-index argmax).
ListenerChoice choose_from_scores(const std::vector<double>& scores);

struct RewardRecord {
    int64_t instance_id = 0;
    std::string speaker;
    Message message;
    int choice = 0;
    int target_index = 0;
    int reward = 0;
    std::vector<double> distribution;
};

inline int reward_for(int choice, int target_index) { return choice == target_index ? 1 : -1; }

}  // namespace refgame::agents
