#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ksfl {

enum class Channel : int {
  client_portion_dispatch = 0,
  feature_upload = 1,
  score_dispatch = 2,
  assistant_portion_dispatch = 3,
  assistant_feature_upload = 4,
  gradient_dispatch = 5,
  portion_upload = 6,
};

constexpr int kChannelCount = 7;

std::string channel_name(Channel c);

struct Message {
  Channel channel = Channel::client_portion_dispatch;
  std::uint64_t payload_elements = 0;
  int round = 0;
  int src = -1;
  int dst = -1;
};

/// Per-round, per-channel payload accounting. Elements are the unit of
/// record; bytes are always elements * bytes_per_element.
class CommLedger {
 public:
  explicit CommLedger(int bytes_per_element = 4) : bytes_per_element_(bytes_per_element) {}

  void record(const Message& m);
  void merge(const CommLedger& other);

  int bytes_per_element() const { return bytes_per_element_; }
  int rounds() const { return static_cast<int>(per_round_.size()); }
  std::uint64_t elements(int round, Channel c) const;
  std::uint64_t bytes(int round, Channel c) const { return elements(round, c) * bytes_per_element_; }
  std::uint64_t round_total_bytes(int round) const;
  std::uint64_t total_elements(Channel c) const;
  std::uint64_t total_bytes(Channel c) const { return total_elements(c) * bytes_per_element_; }
  std::uint64_t total_bytes() const;
  std::uint64_t message_count(Channel c) const;

 private:
  struct RoundRow {
    std::array<std::uint64_t, kChannelCount> elements{};
  };
  std::vector<RoundRow> per_round_;
  std::array<std::uint64_t, kChannelCount> messages_{};
  int bytes_per_element_;
};

}  // namespace ksfl
