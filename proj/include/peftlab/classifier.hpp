#pragma once

#include <string>
#include <vector>

#include "peftlab/encoder.hpp"
#include "peftlab/text.hpp"

namespace peftlab::model {

/// A trainable model that maps one raw example to class logits. Implemented by
/// encoder+adapter stacks and by the dual-encoder fusion model; the training
/// loop only talks to this interface.
class Classifier {
 public:
  virtual ~Classifier() = default;

  // Class names; the index of a name is its class id.
  virtual const std::vector<std::string>& labels() const = 0;
  // Tokenizes and lays out one example (templates, [MASK], truncation).
  virtual text::EncodedExample encode(const text::RawExample& example) const = 0;
  // Class logits [1, labels().size()].
  virtual ad::Tensor logits(const text::EncodedExample& example,
                            const ForwardOptions& opts) const = 0;
  // Every parameter that can receive a gradient from logits(); frozen ones
  // included (the optimizer filters on requires_grad).
  virtual ParameterList parameters() const = 0;
};

}  // namespace peftlab::model
