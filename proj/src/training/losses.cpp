#include <cmath>
#include <iomanip>

#include "refgame/error.hpp"
#include "refgame/training.hpp"

namespace refgame::training {

Dataset make_dataset(const DataConfig& config, const agents::Sizes& sizes) {
    config.catalog.validate();
    world::Corpus corpus =
        world::generate_corpus(config.scenes, config.seed, config.catalog, config.captions_per_scene);
    std::vector<int64_t> ids(corpus.scenes.size());
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int64_t>(i);
    world::DatasetSplits splits = world::make_splits(ids, config.ratios, config.seed);
    auto ref = world::make_referential_splits(corpus, splits.test, config.pairs_per_split,
                                              Rng::mix(config.seed));
    splits.easy = std::move(ref.easy);
    splits.difficult = std::move(ref.difficult);
    return assemble_dataset(std::move(corpus), std::move(splits), sizes);
}

Dataset assemble_dataset(world::Corpus corpus, world::DatasetSplits splits,
                         const agents::Sizes& sizes) {
    agents::Vocabulary vocab(corpus.catalog, sizes.emergent_vocab);
    Dataset d{std::move(corpus), std::move(splits), std::move(vocab), sizes, {}, {}};
    d.sizes.feature_dim = world::FeatureLayout(d.corpus.catalog).dimension;
    for (size_t i = 0; i < d.corpus.scenes.size(); ++i) {
        d.features.push_back(world::encode_scene(d.corpus.scenes[i], d.corpus.catalog));
        std::vector<std::vector<int>> caps;
        for (const auto& c : d.corpus.captions[i]) caps.push_back(d.vocab.encode(c.tokens));
        d.caption_ids.push_back(std::move(caps));
    }
    return d;
}

// ---- losses ----------------------------------------------------------------------------

namespace {

Var mask_column(Graph& g, const Tensor& mask, long t) { return g.constant(mask.col(t)); }

}  // namespace

Var masked_mean_entropy(Graph& g, const std::vector<Var>& step_log_probs, const Tensor& mask) {
    const double active = mask.sum();
    require(active > 0.0, ErrorCode::invalid_argument, "no active steps for entropy");
    const long steps = std::min<long>(static_cast<long>(step_log_probs.size()), mask.cols());
    Var total;
    for (long t = 0; t < steps; ++t) {
        Var h = nn::sum(nn::mul(nn::entropy_from_log_probs(step_log_probs[t]), mask_column(g, mask, t)));
        total = total.valid() ? nn::add(total, h) : h;
    }
    return nn::scale(total, 1.0 / active);
}

void Baseline::update(const std::vector<double>& rewards) {
    if (rewards.empty()) return;
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    value_ = started_ ? decay_ * value_ + (1.0 - decay_) * mean : mean;
    started_ = true;
}

Var reinforce_loss(Var sequence_logprob, Var entropy, const std::vector<double>& rewards,
                   double entropy_coeff, double baseline) {
    require(!rewards.empty(), ErrorCode::invalid_argument, "empty episode batch");
    require(sequence_logprob.rows() == static_cast<long>(rewards.size()) &&
                sequence_logprob.cols() == 1,
            ErrorCode::shape_mismatch, "one sequence log-prob per reward expected");
    Graph& g = *sequence_logprob.graph;
    Tensor w(static_cast<long>(rewards.size()), 1);
    for (size_t i = 0; i < rewards.size(); ++i)
        w(static_cast<long>(i), 0) = -(rewards[i] - baseline) / static_cast<double>(rewards.size());
    Var loss = nn::sum(nn::mul(sequence_logprob, g.constant(w)));
    if (entropy.valid() && entropy_coeff != 0.0) loss = nn::sub(loss, nn::scale(entropy, entropy_coeff));
    return loss;
}

StructuralLoss structural_loss(Graph& g, const ParamStore& store, const DecoderSpec& spec,
                               const Tensor& cond,
                               const std::vector<std::vector<int>>& captions) {
    agents::TeacherForced tf = agents::decoder_teacher_forced(g, store, spec, cond, captions);
    return {nn::scale(nn::mean(tf.sequence_logprob), -1.0),
            nn::scale(nn::sum(tf.sequence_logprob), -1.0 / tf.mask.sum())};
}

Var kl_regularizer(Graph& g, const std::vector<Var>& current, const std::vector<Tensor>& pretrained,
                   const Tensor& mask) {
    const long steps = std::min({static_cast<long>(current.size()),
                                 static_cast<long>(pretrained.size()), mask.cols()});
    require(steps > 0, ErrorCode::invalid_argument, "no steps to regularise");
    const double active = mask.leftCols(steps).sum();
    require(active > 0.0, ErrorCode::invalid_argument, "no active steps to regularise");
    Var total;
    for (long t = 0; t < steps; ++t) {
        const Tensor& pre = pretrained[static_cast<size_t>(t)];
        require(pre.cols() == current[t].cols() && pre.rows() == current[t].rows(),
                ErrorCode::invalid_argument,
                "vocabulary mismatch between current and pretrained policy (" +
                    std::to_string(current[t].cols()) + " vs " + std::to_string(pre.cols()) + ")");
        Var diff = nn::sub(current[t], g.constant(pre));
        Var kl = nn::row_sum(nn::mul(nn::exp(current[t]), diff));
        Var masked = nn::sum(nn::mul(kl, mask_column(g, mask, t)));
        total = total.valid() ? nn::add(total, masked) : masked;
    }
    return nn::scale(total, 1.0 / active);
}

Var multitask_loss(Var functional, Var structural, double lambda_f, double lambda_s) {
    require(lambda_f >= 0.0 && lambda_s >= 0.0, ErrorCode::invalid_argument,
            "loss weights must be non-negative");
    return nn::add(nn::scale(functional, lambda_f), nn::scale(structural, lambda_s));
}

// ---- metrics ------------------------------------------------------------------------------

MetricsLog::MetricsLog(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
    require(static_cast<bool>(*out_), ErrorCode::io, "cannot write metrics to " + path.string());
    *out_ << "step,phase,loss,functional,structural,kl,entropy,reward,accuracy\n";
}

void MetricsLog::write(const MetricRow& r) {
    rows_.push_back(r);
    if (!out_) return;
    *out_ << r.step << ',' << r.phase << std::setprecision(8) << ',' << r.loss << ','
          << r.functional << ',' << r.structural << ',' << r.kl << ',' << r.entropy << ','
          << r.reward << ',' << r.accuracy << '\n';
    out_->flush();
}

}  // namespace refgame::training
