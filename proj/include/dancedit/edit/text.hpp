#pragma once

// Prompt tokenization, vocabulary files and the learned prompt encoder.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dancedit/tensor/nn.hpp"

namespace dancedit::edit {

inline constexpr std::size_t kMaxPromptTokens = 64;
inline constexpr const char* kUnkToken = "<unk>";

// Lowercased ASCII alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
 public:
  // Id 0 is always <unk>; the remaining tokens are sorted.
  static Vocab build(const std::vector<std::string>& prompts);
  // One "token<TAB>id" entry per line.
  static Vocab load(const std::filesystem::path& path);
  static Vocab parse(std::string_view text);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  // Throws std::invalid_argument for prompts with no tokens or more than
  // kMaxPromptTokens tokens. Unknown words map to <unk>.
  std::vector<std::size_t> encode(std::string_view prompt) const;
  bool operator==(const Vocab&) const = default;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> ids_;
};

struct TextEmbedding {
  Tensor pooled;     // [1×H]
  Tensor per_frame;  // [N×H], pooled tiled plus frame positions
};

// Token embeddings, mean pool, linear to the output width.
struct TextEncoder {
  Embedding tokens;
  Linear proj;

  static TextEncoder create(ParameterSet& params, const std::string& name, std::size_t vocab,
                            std::size_t token_width, std::size_t out_width, Initializer& init);
  Tensor pooled(const std::vector<std::size_t>& ids) const;
  TextEmbedding encode(const std::vector<std::size_t>& ids, std::size_t frames) const;
};

// Pooled vector tiled to `frames` rows plus sinusoidal frame positions.
Tensor tile_with_positions(const Tensor& pooled, std::size_t frames);

}  // namespace dancedit::edit
