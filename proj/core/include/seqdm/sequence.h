#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace seqdm {

// Reserved ids. Content tokens start at kFirstContent.
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
inline constexpr int kFirstContent = 3;

// Output heads only ever emit EOS or a content token. Emission index 0 is
// EOS, emission index e >= 1 is content id e + 2.
inline constexpr int emit_size(int vocab_size) { return vocab_size - 2; }
inline constexpr int emit_index(int id) { return id == kEos ? 0 : id - 2; }
inline constexpr int token_from_emit(int e) { return e == 0 ? kEos : e + 2; }

class Vocab {
 public:
  Vocab() = default;
  // `tokens` lists every token, reserved ones first (ids 0..2).
  explicit Vocab(std::vector<std::string> tokens);
  // Reserved tokens followed by `content`.
  static Vocab with_content(const std::vector<std::string>& content);
  // Reserved tokens followed by n generated content tokens w0, w1, ...
  static Vocab synthetic(int n_content);

  int size() const { return static_cast<int>(tokens_.size()); }
  int num_content() const { return size() - kFirstContent; }
  const std::string& token(int id) const;
  // -1 when absent.
  int lookup(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  static const char* bos_token() { return "<s>"; }
  static const char* eos_token() { return "</s>"; }
  static const char* pad_token() { return "<pad>"; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Content token ids; EOS is represented by `terminated`, never stored in ids.
struct TokenSeq {
  std::vector<int> ids;
  bool terminated = true;

  // Parses a raw id list: content, then optionally EOS followed only by PAD.
  // Throws UsageError on PAD inside content, content after EOS or a second EOS.
  static TokenSeq from_ids(std::span<const int> raw);
  // Content ids followed by EOS when terminated.
  std::vector<int> raw_ids() const;

  int length() const { return static_cast<int>(ids.size()); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSeq&) const = default;
  auto operator<=>(const TokenSeq&) const = default;
};

// T rows of `dim` reals, row-major.
struct VecSeq {
  int dim = 0;
  std::vector<double> data;

  VecSeq() = default;
  VecSeq(int dim, std::vector<double> data);
  int length() const { return dim == 0 ? 0 : static_cast<int>(data.size()) / dim; }
  std::span<const double> row(int t) const { return {data.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim)}; }
  std::span<double> row(int t) { return {data.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim)}; }
  bool operator==(const VecSeq&) const = default;
};

// Source side of a pair: tokens for translation-like tasks, vectors for the
// captioning-like task.
using Source = std::variant<TokenSeq, VecSeq>;

int source_length(const Source& s);

// Throws UsageError if any id is reserved or >= vocab_size.
void validate_tokens(const TokenSeq& s, int vocab_size);

std::string to_string(const TokenSeq& s, const Vocab& vocab);
std::string to_string(const TokenSeq& s);

// Hash for deduplicating sampled sequences.
struct SourceHash {
  std::size_t operator()(const TokenSeq& s) const;
  std::size_t operator()(const VecSeq& s) const;
  std::size_t operator()(const Source& s) const;
};

}  // namespace seqdm
