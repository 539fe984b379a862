#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "famadapt/adapter.hpp"
#include "famadapt/ops.hpp"
#include "famadapt/rng.hpp"
#include "famadapt/tensor.hpp"

namespace famadapt {

struct ModelConfig {
  Index vocab_size = 0;
  Index model_dim = 0;
  Index ff_dim = 0;
  Index heads = 1;
  Index enc_layers = 1;
  Index dec_layers = 1;
  Index max_len = 64;
  double dropout = 0.0;
  AdapterPlacement adapter_placement = AdapterPlacement::after_ff;
  bool use_embedding_adapters = false;

  // Throws ConfigError listing every violation at once.
  void validate() const;
};

namespace detail {

struct AttentionBlock {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter ln_scale, ln_offset;
};

struct FeedForwardBlock {
  Parameter w1, b1, w2, b2;
  Parameter ln_scale, ln_offset;
};

struct EncoderLayer {
  AttentionBlock self_attn;
  FeedForwardBlock ff;
};

struct DecoderLayer {
  AttentionBlock self_attn;
  AttentionBlock cross_attn;
  FeedForwardBlock ff;
};

}  // namespace detail

// One named adapter per model slot ("enc.emb", "dec.emb", "enc.0", ...).
// The model holds a non-owning pointer to at most one attached set; the
// caller keeps ownership so detached sets survive for later reattachment.
struct AdapterSet {
  std::string set_id;
  std::map<std::string, AdapterLayer> layers;

  std::vector<Parameter*> parameters();
  Index param_count() const;
};

// Post-norm encoder-decoder transformer with tied input/output embeddings.
// Sequences are processed one at a time (no intra-batch padding); the target
// language is selected by prefixing its tag token to the source and using it
// as the decoder start token.
class Seq2SeqModel {
 public:
  Seq2SeqModel(ModelConfig cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  // Training-time dropout is a run property, not a weight property, so the
  // trainer may adjust it on a built model.
  void set_dropout(double rate);

  // Slot names an attached adapter set must cover, in canonical order.
  std::vector<std::string> adapter_slots() const;

  void attach_adapter_set(AdapterSet* set);  // nullptr detaches
  AdapterSet* active_adapters() const { return active_; }

  void freeze_backbone();
  void unfreeze_backbone();
  bool backbone_frozen() const { return frozen_; }

  std::vector<Parameter*> backbone_parameters();

  // Returns [len+1 x h] encoder states (tag prefix included). `rng` is only
  // consumed when train_mode and dropout > 0.
  Tensor encode(std::span<const TokenId> src_ids, TokenId lang_tag, bool train_mode,
                Rng* rng = nullptr);

  // Decoder stack over an explicit input sequence; returns [len x h] states.
  Tensor decode_states(const Tensor& enc_out, std::span<const TokenId> input_ids, bool train_mode,
                       Rng* rng = nullptr);

  // Training pass: decoder input is lang_tag followed by tgt_ids without its
  // last token, so logits[t] predicts tgt_ids[t]. Returns [len x V].
  Tensor decode_teacher_forced(const Tensor& enc_out, std::span<const TokenId> tgt_ids,
                               TokenId lang_tag, bool train_mode, Rng* rng = nullptr);

  // Tied projection of decoder states onto the vocabulary.
  Tensor output_logits(const Tensor& states);

 private:
  Tensor embed(std::span<const TokenId> ids, const char* emb_slot, bool train_mode, Rng* rng);
  Tensor run_ff_sublayer(const detail::FeedForwardBlock& blk, const Tensor& x,
                         const std::string& slot, bool train_mode, Rng* rng);
  Tensor maybe_dropout(const Tensor& x, bool train_mode, Rng* rng);
  const AdapterLayer* slot_adapter(const std::string& slot) const;

  ModelConfig cfg_;
  Parameter embedding_;  // [V x h], shared by source, target, and output
  std::vector<double> positional_;  // (max_len + 1) rows of h
  std::vector<detail::EncoderLayer> enc_;
  std::vector<detail::DecoderLayer> dec_;
  AdapterSet* active_ = nullptr;
  bool frozen_ = false;
};

// Builds a slot-complete identity-initialized set for `model`. Adapter
// parameters are named "<set_id>/<slot>.<field>".
AdapterSet make_adapter_set(const Seq2SeqModel& model, Index bottleneck, double init_scale,
                            const std::string& set_id, Rng& rng);

// Order-sensitive hash of parameter values (bit patterns), used to prove
// frozen weights never move.
std::uint64_t parameters_hash(const std::vector<Parameter*>& params);

}  // namespace famadapt
