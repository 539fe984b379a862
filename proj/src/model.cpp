#include "famadapt/model.hpp"

#include <cmath>
#include <cstring>
#include <set>

#include "famadapt/error.hpp"

namespace famadapt {

namespace {

constexpr double kMaskValue = -1e9;

Parameter make_weight(Index rows, Index cols, double bound, Rng& rng, std::string name) {
  Tensor t({rows, cols});
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return Parameter(std::move(t), std::move(name));
}

detail::AttentionBlock make_attention(Index h, double bound, Rng& rng, const std::string& prefix) {
  detail::AttentionBlock blk;
  blk.wq = make_weight(h, h, bound, rng, prefix + ".wq");
  blk.bq = Parameter(Tensor({h}, 0.0), prefix + ".bq");
  blk.wk = make_weight(h, h, bound, rng, prefix + ".wk");
  blk.bk = Parameter(Tensor({h}, 0.0), prefix + ".bk");
  blk.wv = make_weight(h, h, bound, rng, prefix + ".wv");
  blk.bv = Parameter(Tensor({h}, 0.0), prefix + ".bv");
  blk.wo = make_weight(h, h, bound, rng, prefix + ".wo");
  blk.bo = Parameter(Tensor({h}, 0.0), prefix + ".bo");
  blk.ln_scale = Parameter(Tensor({h}, 1.0), prefix + ".ln_scale");
  blk.ln_offset = Parameter(Tensor({h}, 0.0), prefix + ".ln_offset");
  return blk;
}

detail::FeedForwardBlock make_ff(Index h, Index ff, double bound, Rng& rng,
                                 const std::string& prefix) {
  detail::FeedForwardBlock blk;
  blk.w1 = make_weight(h, ff, bound, rng, prefix + ".w1");
  blk.b1 = Parameter(Tensor({ff}, 0.0), prefix + ".b1");
  blk.w2 = make_weight(ff, h, bound, rng, prefix + ".w2");
  blk.b2 = Parameter(Tensor({h}, 0.0), prefix + ".b2");
  blk.ln_scale = Parameter(Tensor({h}, 1.0), prefix + ".ln_scale");
  blk.ln_offset = Parameter(Tensor({h}, 0.0), prefix + ".ln_offset");
  return blk;
}

void collect_attention(detail::AttentionBlock& blk, std::vector<Parameter*>& out) {
  out.insert(out.end(), {&blk.wq, &blk.bq, &blk.wk, &blk.bk, &blk.wv, &blk.bv, &blk.wo, &blk.bo,
                         &blk.ln_scale, &blk.ln_offset});
}

void collect_ff(detail::FeedForwardBlock& blk, std::vector<Parameter*>& out) {
  out.insert(out.end(), {&blk.w1, &blk.b1, &blk.w2, &blk.b2, &blk.ln_scale, &blk.ln_offset});
}

// Multi-head attention; heads are column slices of the fused projections.
Tensor attention(const detail::AttentionBlock& blk, const Tensor& q_in, const Tensor& kv_in,
                 const Tensor* additive_mask, Index heads) {
  Tensor q = add_bias(matmul(q_in, blk.wq.tensor), blk.bq.tensor);
  Tensor k = add_bias(matmul(kv_in, blk.wk.tensor), blk.bk.tensor);
  Tensor v = add_bias(matmul(kv_in, blk.wv.tensor), blk.bv.tensor);
  const Index dh = q.dim(1) / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> ctx;
  ctx.reserve(static_cast<std::size_t>(heads));
  for (Index i = 0; i < heads; ++i) {
    Tensor qi = slice_cols(q, i * dh, dh);
    Tensor ki = slice_cols(k, i * dh, dh);
    Tensor vi = slice_cols(v, i * dh, dh);
    Tensor scores = scale(matmul(qi, transpose(ki)), inv_sqrt);
    if (additive_mask) scores = add(scores, *additive_mask);
    ctx.push_back(matmul(softmax(scores), vi));
  }
  Tensor merged = concat_cols(ctx);
  return add_bias(matmul(merged, blk.wo.tensor), blk.bo.tensor);
}

Tensor causal_mask(Index n) {
  Tensor mask({n, n}, 0.0);
  auto& mv = mask.values();
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) mv[static_cast<std::size_t>(i * n + j)] = kMaskValue;
  return mask;
}

}  // namespace

void ModelConfig::validate() const {
  std::string problems;
  auto flag = [&](const std::string& msg) { problems += msg + "; "; };
  if (vocab_size < 1) flag("vocab_size must be >= 1");
  if (model_dim < 1) flag("model_dim must be >= 1");
  if (ff_dim < 1) flag("ff_dim must be >= 1");
  if (heads < 1) flag("heads must be >= 1");
  if (heads >= 1 && model_dim >= 1 && model_dim % heads != 0)
    flag("model_dim " + std::to_string(model_dim) + " not divisible by heads " +
         std::to_string(heads));
  if (enc_layers < 1) flag("enc_layers must be >= 1");
  if (dec_layers < 1) flag("dec_layers must be >= 1");
  if (max_len < 1) flag("max_len must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) flag("dropout must be in [0,1)");
  if (!problems.empty())
    throw ConfigError("model config: " + problems.substr(0, problems.size() - 2));
}

std::vector<Parameter*> AdapterSet::parameters() {
  std::vector<Parameter*> out;
  for (auto& [slot, layer] : layers)
    for (Parameter* p : layer.parameters()) out.push_back(p);
  return out;
}

Index AdapterSet::param_count() const {
  Index total = 0;
  for (const auto& [slot, layer] : layers) total += adapter_param_count(layer.config);
  return total;
}

Seq2SeqModel::Seq2SeqModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const Index h = cfg_.model_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  embedding_ = make_weight(cfg_.vocab_size, h, bound, rng, "emb");

  positional_.assign(static_cast<std::size_t>((cfg_.max_len + 1) * h), 0.0);
  for (Index pos = 0; pos <= cfg_.max_len; ++pos)
    for (Index j = 0; j < h; ++j) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, static_cast<double>(2 * (j / 2)) / static_cast<double>(h));
      positional_[static_cast<std::size_t>(pos * h + j)] =
          (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }

  for (Index i = 0; i < cfg_.enc_layers; ++i) {
    std::string prefix = "enc." + std::to_string(i);
    detail::EncoderLayer layer;
    layer.self_attn = make_attention(h, bound, rng, prefix + ".sa");
    layer.ff = make_ff(h, cfg_.ff_dim, bound, rng, prefix + ".ff");
    enc_.push_back(std::move(layer));
  }
  for (Index i = 0; i < cfg_.dec_layers; ++i) {
    std::string prefix = "dec." + std::to_string(i);
    detail::DecoderLayer layer;
    layer.self_attn = make_attention(h, bound, rng, prefix + ".sa");
    layer.cross_attn = make_attention(h, bound, rng, prefix + ".ca");
    layer.ff = make_ff(h, cfg_.ff_dim, bound, rng, prefix + ".ff");
    dec_.push_back(std::move(layer));
  }
}

std::vector<std::string> Seq2SeqModel::adapter_slots() const {
  std::vector<std::string> slots;
  if (cfg_.use_embedding_adapters) {
    slots.push_back("enc.emb");
    slots.push_back("dec.emb");
  }
  for (Index i = 0; i < cfg_.enc_layers; ++i) slots.push_back("enc." + std::to_string(i));
  for (Index i = 0; i < cfg_.dec_layers; ++i) slots.push_back("dec." + std::to_string(i));
  return slots;
}

void Seq2SeqModel::attach_adapter_set(AdapterSet* set) {
  if (set == nullptr) {
    active_ = nullptr;
    return;
  }
  std::set<std::string> provided;
  for (const auto& [slot, layer] : set->layers) provided.insert(slot);
  for (const std::string& slot : adapter_slots()) {
    if (!provided.erase(slot))
      throw CoverageError("adapter set '" + set->set_id + "' missing slot '" + slot + "'");
  }
  if (!provided.empty())
    throw CoverageError("adapter set '" + set->set_id + "' has unexpected slot '" +
                        *provided.begin() + "'");
  active_ = set;
}

void Seq2SeqModel::set_dropout(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout must be in [0, 1), got " + std::to_string(rate));
  }
  cfg_.dropout = rate;
}

void Seq2SeqModel::freeze_backbone() {
  for (Parameter* p : backbone_parameters()) p->freeze();
  frozen_ = true;
}

void Seq2SeqModel::unfreeze_backbone() {
  for (Parameter* p : backbone_parameters()) p->unfreeze();
  frozen_ = false;
}

std::vector<Parameter*> Seq2SeqModel::backbone_parameters() {
  std::vector<Parameter*> out;
  out.push_back(&embedding_);
  for (auto& layer : enc_) {
    collect_attention(layer.self_attn, out);
    collect_ff(layer.ff, out);
  }
  for (auto& layer : dec_) {
    collect_attention(layer.self_attn, out);
    collect_attention(layer.cross_attn, out);
    collect_ff(layer.ff, out);
  }
  return out;
}

const AdapterLayer* Seq2SeqModel::slot_adapter(const std::string& slot) const {
  if (active_ == nullptr) return nullptr;
  auto it = active_->layers.find(slot);
  return it == active_->layers.end() ? nullptr : &it->second;
}

Tensor Seq2SeqModel::maybe_dropout(const Tensor& x, bool train_mode, Rng* rng) {
  if (!train_mode || cfg_.dropout == 0.0) return x;
  if (rng == nullptr) throw ContractError("train-mode forward with dropout needs an rng");
  return dropout(x, cfg_.dropout, *rng);
}

Tensor Seq2SeqModel::embed(std::span<const TokenId> ids, const char* emb_slot, bool train_mode,
                           Rng* rng) {
  const Index n = static_cast<Index>(ids.size());
  const Index h = cfg_.model_dim;
  if (n > cfg_.max_len + 1)
    throw DomainError("sequence of " + std::to_string(n) + " tokens exceeds max_len " +
                      std::to_string(cfg_.max_len));
  Tensor x = scale(embedding_lookup(embedding_.tensor, ids),
                   std::sqrt(static_cast<double>(h)));
  // The lexical adapter acts on raw embeddings, before positions are mixed in.
  if (const AdapterLayer* ad = slot_adapter(emb_slot)) x = adapter_forward(*ad, x);
  Tensor pos = Tensor::from_data(
      {n, h}, std::vector<double>(positional_.begin(), positional_.begin() + n * h));
  return maybe_dropout(add(x, pos), train_mode, rng);
}

Tensor Seq2SeqModel::run_ff_sublayer(const detail::FeedForwardBlock& blk, const Tensor& x,
                                     const std::string& slot, bool train_mode, Rng* rng) {
  const AdapterLayer* ad = slot_adapter(slot);
  Tensor in = x;
  if (ad && ad->config.placement == AdapterPlacement::before_ff) in = adapter_forward(*ad, in);
  Tensor ff = add_bias(matmul(relu(add_bias(matmul(in, blk.w1.tensor), blk.b1.tensor)),
                              blk.w2.tensor),
                       blk.b2.tensor);
  Tensor out = layer_norm(add(in, maybe_dropout(ff, train_mode, rng)), blk.ln_scale.tensor,
                          blk.ln_offset.tensor, kLayerNormEps);
  if (ad && ad->config.placement == AdapterPlacement::after_ff) out = adapter_forward(*ad, out);
  return out;
}

Tensor Seq2SeqModel::encode(std::span<const TokenId> src_ids, TokenId lang_tag, bool train_mode,
                            Rng* rng) {
  std::vector<TokenId> tagged;
  tagged.reserve(src_ids.size() + 1);
  tagged.push_back(lang_tag);
  tagged.insert(tagged.end(), src_ids.begin(), src_ids.end());
  if (static_cast<Index>(src_ids.size()) > cfg_.max_len)
    throw DomainError("source of " + std::to_string(src_ids.size()) + " tokens exceeds max_len " +
                      std::to_string(cfg_.max_len));
  Tensor x = embed(tagged, "enc.emb", train_mode, rng);
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    Tensor sa = attention(enc_[i].self_attn, x, x, nullptr, cfg_.heads);
    x = layer_norm(add(x, maybe_dropout(sa, train_mode, rng)), enc_[i].self_attn.ln_scale.tensor,
                   enc_[i].self_attn.ln_offset.tensor, kLayerNormEps);
    x = run_ff_sublayer(enc_[i].ff, x, "enc." + std::to_string(i), train_mode, rng);
  }
  return x;
}

Tensor Seq2SeqModel::decode_states(const Tensor& enc_out, std::span<const TokenId> input_ids,
                                   bool train_mode, Rng* rng) {
  if (input_ids.empty()) throw ContractError("decoder input must be nonempty");
  if (static_cast<Index>(input_ids.size()) > cfg_.max_len + 1)
    throw DomainError("decoder input of " + std::to_string(input_ids.size()) +
                      " tokens exceeds max_len " + std::to_string(cfg_.max_len));
  Tensor x = embed(input_ids, "dec.emb", train_mode, rng);
  Tensor mask = causal_mask(static_cast<Index>(input_ids.size()));
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    Tensor sa = attention(dec_[i].self_attn, x, x, &mask, cfg_.heads);
    x = layer_norm(add(x, maybe_dropout(sa, train_mode, rng)), dec_[i].self_attn.ln_scale.tensor,
                   dec_[i].self_attn.ln_offset.tensor, kLayerNormEps);
    Tensor ca = attention(dec_[i].cross_attn, x, enc_out, nullptr, cfg_.heads);
    x = layer_norm(add(x, maybe_dropout(ca, train_mode, rng)), dec_[i].cross_attn.ln_scale.tensor,
                   dec_[i].cross_attn.ln_offset.tensor, kLayerNormEps);
    x = run_ff_sublayer(dec_[i].ff, x, "dec." + std::to_string(i), train_mode, rng);
  }
  return x;
}

Tensor Seq2SeqModel::decode_teacher_forced(const Tensor& enc_out, std::span<const TokenId> tgt_ids,
                                           TokenId lang_tag, bool train_mode, Rng* rng) {
  if (tgt_ids.empty()) throw ContractError("teacher forcing needs at least one target token");
  std::vector<TokenId> input;
  input.reserve(tgt_ids.size());
  input.push_back(lang_tag);
  input.insert(input.end(), tgt_ids.begin(), tgt_ids.end() - 1);
  Tensor states = decode_states(enc_out, input, train_mode, rng);
  return output_logits(states);
}

Tensor Seq2SeqModel::output_logits(const Tensor& states) {
  return matmul(states, transpose(embedding_.tensor));
}

AdapterSet make_adapter_set(const Seq2SeqModel& model, Index bottleneck, double init_scale,
                            const std::string& set_id, Rng& rng) {
  AdapterSet set;
  set.set_id = set_id;
  for (const std::string& slot : model.adapter_slots()) {
    AdapterConfig cfg;
    cfg.model_dim = model.config().model_dim;
    cfg.bottleneck = bottleneck;
    cfg.init_scale = init_scale;
    cfg.placement = slot.ends_with(".emb") ? AdapterPlacement::embedding
                                           : model.config().adapter_placement;
    set.layers.emplace(slot, adapter_init(cfg, rng, set_id + "/" + slot));
  }
  return set;
}

std::uint64_t parameters_hash(const std::vector<Parameter*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Parameter* p : params) {
    h = fnv1a(p->name, h);
    const auto& v = p->tensor.values();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()),
                               v.size() * sizeof(double)),
              h);
  }
  return h;
}

}  // namespace famadapt
