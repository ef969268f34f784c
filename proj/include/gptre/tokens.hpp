#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace gptre {

// Token-count estimate for a prompt. Implementations must be monotone:
// estimate(a + b) >= estimate(a).
class TokenEstimator {
 public:
  virtual ~TokenEstimator() = default;
  virtual std::string name() const = 0;
  virtual std::size_t estimate(std::string_view text) const = 0;
};

// ceil(chars / 4) scaled by a 1.10 margin, rounded up.
class CharQuarterEstimator : public TokenEstimator {
 public:
  std::string name() const override { return "chars/4*1.10"; }
  std::size_t estimate(std::string_view text) const override {
    const std::size_t quarters = (text.size() + 3) / 4;
    return (quarters * 11 + 9) / 10;
  }
};

// One token per byte.
class CharCountEstimator : public TokenEstimator {
 public:
  std::string name() const override { return "chars"; }
  std::size_t estimate(std::string_view text) const override { return text.size(); }
};

}  // namespace gptre
