#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "tubelink/coretypes.hpp"
#include "tubelink/crosstube.hpp"
#include "tubelink/decoder.hpp"
#include "tubelink/nn.hpp"

namespace tubelink {

struct ModelConfig {
  DecoderConfig decoder;
  int embed_dim = 32;
  int link_heads = 2;
  TaskMode mode = TaskMode::kVPS;

  LinkerConfig linker() const { return {decoder.width, link_heads, 2 * decoder.width, true}; }

  void validate() const {
    decoder.validate();
    if (embed_dim < 1) throw Error("ModelConfig: embed_dim must be >= 1");
    if (link_heads < 1 || decoder.width % link_heads != 0) throw Error("ModelConfig: link_heads must divide width");
  }
};

// Decoder, cross-tube linker and embedding head with one parameter registry.
class TubeLinkModel {
 public:
  TubeLinkModel() = default;
  TubeLinkModel(const ModelConfig& cfg, LabelSpace labels, std::uint64_t seed) : cfg_(cfg), labels_(std::move(labels)) {
    cfg_.decoder.num_classes = labels_.num_classes();
    cfg_.validate();
    Rng rng(seed);
    decoder_ = TubeDecoder(cfg_.decoder, rng);
    linker_ = CrossTubeLinker(cfg_.linker(), rng);
    embedding_ = EmbeddingHead(static_cast<std::size_t>(cfg_.decoder.width), static_cast<std::size_t>(cfg_.embed_dim), rng);
    decoder_.register_into(params_, "decoder");
    linker_.register_into(params_, "linker");
    embedding_.register_into(params_, "embed");
  }

  // Copies share parameter storage; clone() makes an independent model.
  TubeLinkModel clone() const {
    TubeLinkModel out(cfg_, labels_, 0);
    out.copy_parameters_from(*this);
    return out;
  }

  void copy_parameters_from(const TubeLinkModel& other) {
    const auto& mine = params_.items();
    const auto& theirs = other.params_.items();
    if (mine.size() != theirs.size()) throw Error("copy_parameters_from: architecture mismatch");
    for (std::size_t i = 0; i < mine.size(); ++i) {
      if (mine[i].name != theirs[i].name || mine[i].tensor.shape() != theirs[i].tensor.shape()) {
        throw Error("copy_parameters_from: architecture mismatch at " + mine[i].name);
      }
      auto dst = Tensor(mine[i].tensor).mutable_values();
      auto src = theirs[i].tensor.values();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const LabelSpace& labels() const { return labels_; }
  const TubeDecoder& decoder() const { return decoder_; }
  const CrossTubeLinker& linker() const { return linker_; }
  const EmbeddingHead& embedding() const { return embedding_; }
  const ParameterSet& parameters() const { return params_; }

 private:
  ModelConfig cfg_;
  LabelSpace labels_;
  TubeDecoder decoder_;
  CrossTubeLinker linker_;
  EmbeddingHead embedding_;
  ParameterSet params_;
};

}  // namespace tubelink
