#include "dancedit/edit/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dancedit/io/binary.hpp"

namespace dancedit::edit {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) && c < 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab Vocab::build(const std::vector<std::string>& prompts) {
  std::set<std::string> words;
  for (const auto& p : prompts) {
    for (auto& t : tokenize(p)) words.insert(std::move(t));
  }
  Vocab v;
  v.tokens_.push_back(kUnkToken);
  v.tokens_.insert(v.tokens_.end(), words.begin(), words.end());
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.ids_[v.tokens_[i]] = i;
  return v;
}

Vocab Vocab::parse(std::string_view text) {
  Vocab v;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw io::FormatError("vocab line " + std::to_string(line_no) + " lacks a tab");
    }
    const std::string token = line.substr(0, tab);
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw io::FormatError("vocab line " + std::to_string(line_no) + " has a bad id");
    }
    if (id != v.tokens_.size()) {
      throw io::FormatError("vocab ids must be dense and ordered (line " +
                            std::to_string(line_no) + ")");
    }
    if (!v.ids_.emplace(token, id).second) throw io::FormatError("duplicate vocab token " + token);
    v.tokens_.push_back(token);
  }
  if (v.tokens_.empty() || v.tokens_[0] != kUnkToken) {
    throw io::FormatError("vocab must start with <unk> as id 0");
  }
  return v;
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += tokens_[i] + "\t" + std::to_string(i) + "\n";
  }
  return out;
}

Vocab Vocab::load(const std::filesystem::path& path) { return parse(io::read_file(path)); }

void Vocab::save(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

std::size_t Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? 0 : it->second;
}

std::vector<std::size_t> Vocab::encode(std::string_view prompt) const {
  const auto toks = tokenize(prompt);
  if (toks.empty()) throw std::invalid_argument("prompt has no tokens");
  if (toks.size() > kMaxPromptTokens) {
    throw std::invalid_argument("prompt exceeds " + std::to_string(kMaxPromptTokens) + " tokens");
  }
  std::vector<std::size_t> ids;
  ids.reserve(toks.size());
  for (const auto& t : toks) ids.push_back(id(t));
  return ids;
}

TextEncoder TextEncoder::create(ParameterSet& params, const std::string& name, std::size_t vocab,
                                std::size_t token_width, std::size_t out_width,
                                Initializer& init) {
  TextEncoder enc;
  enc.tokens = Embedding::create(params, name + ".tokens", vocab, token_width, init);
  enc.proj = Linear::create(params, name + ".proj", token_width, out_width, init);
  return enc;
}

Tensor TextEncoder::pooled(const std::vector<std::size_t>& ids) const {
  if (ids.empty()) throw std::invalid_argument("text encoder: no tokens");
  for (auto id : ids) {
    if (id >= tokens.table.rows()) throw std::out_of_range("text encoder: token id out of range");
  }
  return proj(mean_rows(tokens(ids)));
}

Tensor tile_with_positions(const Tensor& pooled, std::size_t frames) {
  return add(tile_rows(pooled, frames), sinusoidal_positions<float>(frames, pooled.cols()));
}

TextEmbedding TextEncoder::encode(const std::vector<std::size_t>& ids, std::size_t frames) const {
  TextEmbedding e;
  e.pooled = pooled(ids);
  e.per_frame = tile_with_positions(e.pooled, frames);
  return e;
}

}  // namespace dancedit::edit
