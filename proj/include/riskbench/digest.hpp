#pragma once

#include <memory>
#include <string>
#include <string_view>

namespace riskbench {

/// Lowercase hex SHA-256 of the input bytes.
std::string sha256_hex(std::string_view data);

/// Incremental hasher for multi-field keys. Each field is length-prefixed so
/// ("ab", "c") and ("a", "bc") never collide.
class FieldHasher {
 public:
  FieldHasher();
  ~FieldHasher();
  FieldHasher(const FieldHasher&) = delete;
  FieldHasher& operator=(const FieldHasher&) = delete;

  FieldHasher& add(std::string_view field);
  FieldHasher& add(long long value);
  std::string hex();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace riskbench
