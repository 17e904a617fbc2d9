#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crel/archive.hpp"
#include "crel/autodiff.hpp"
#include "crel/data.hpp"

namespace crel {

inline constexpr const char* kHeadStart = "[E11]";
inline constexpr const char* kHeadEnd = "[E12]";
inline constexpr const char* kTailStart = "[E21]";
inline constexpr const char* kTailEnd = "[E22]";
inline constexpr const char* kSentenceSep = "[SEP]";

/// Token sequence with the four entity markers inserted.
struct MarkedSequence {
  std::vector<std::string> tokens;
  int head_marker = -1;  ///< position of [E11]
  int tail_marker = -1;  ///< position of [E21]
  int last_marker = -1;  ///< largest position of any marker
};

MarkedSequence mark_entities(const Sample& sample);

struct BackboneConfig {
  std::string kind = "toy";  ///< "toy" or "transformer"
  int dim = 64;
  int vocab_buckets = 2048;
  int max_length = 256;
  double init_scale = 0.5;

  bool operator==(const BackboneConfig&) const = default;
};

/// Maps marked sequences to per-position hidden vectors of width dim().
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::string tag() const = 0;
  virtual const BackboneConfig& config() const = 0;
  int dim() const { return config().dim; }

  /// Hidden vectors at `positions[i]` of `batch[i]`, one row per query.
  virtual Var forward(Tape& tape, const std::vector<MarkedSequence>& batch,
                      const std::vector<std::vector<int>>& positions) = 0;

  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;

  /// Stable bucket id for a token; markers and [SEP] get reserved ids.
  int token_id(const std::string& token) const;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, std::uint64_t seed);

/// Entity-marker encoder: h = LayerNorm(W1 [h_E11; h_E21] + b) with a trainable gain and shift.
///
/// Copying an Encoder deep-copies every parameter, including the backbone;
/// a copy is the snapshot used as the frozen previous-task model.
class Encoder {
 public:
  Encoder(const BackboneConfig& cfg, std::uint64_t seed);
  Encoder(const Encoder& o);
  Encoder& operator=(const Encoder& o);
  Encoder(Encoder&&) noexcept = default;
  Encoder& operator=(Encoder&&) noexcept = default;

  int dim() const { return backbone_->dim(); }
  const BackboneConfig& backbone_config() const { return backbone_->config(); }
  Backbone& backbone() { return *backbone_; }

  /// Whether every marker survives right-truncation to the backbone length limit.
  bool fits(const Sample& s) const;
  /// Marked and right-truncated sequence; nullopt (with a warning) if a marker would be cut.
  std::optional<MarkedSequence> prepare(const Sample& s) const;

  /// Batch of representations, one row per sample. Throws DataError if a sample does not fit.
  Var encode(Tape& tape, const std::vector<const Sample*>& batch);
  /// Gradient-free encoding.
  Matrix encode(const std::vector<const Sample*>& batch) const;
  Vector encode(const Sample& s) const;

  std::vector<Parameter*> parameters();

  Parameter& fusion_weight() { return w1_; }
  Parameter& fusion_bias() { return b_; }
  Parameter& norm_gain() { return gain_; }
  Parameter& norm_shift() { return shift_; }

  void save(Archive& ar, const std::string& prefix) const;
  static Encoder load(const Archive& ar, const std::string& prefix);

 private:
  std::unique_ptr<Backbone> backbone_;
  Parameter w1_;
  Parameter b_;
  Parameter gain_;
  Parameter shift_;
};

/// Frozen copy of an encoder.
Encoder snapshot(const Encoder& e);

}  // namespace crel
