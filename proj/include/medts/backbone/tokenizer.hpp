#pragma once

#include <nlohmann/json.hpp>

#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace medts::backbone {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<int> encode(std::string_view text) const = 0;
  virtual int vocab_size() const = 0;
};

/// One token per byte; vocabulary of 256.
class ByteTokenizer final : public Tokenizer {
 public:
  std::vector<int> encode(std::string_view text) const override {
    std::vector<int> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(static_cast<int>(c));
    return out;
  }
  int vocab_size() const override { return 256; }
};

namespace detail {

inline std::string utf8(unsigned cp) {
  std::string s;
  if (cp < 0x80) {
    s += static_cast<char>(cp);
  } else if (cp < 0x800) {
    s += static_cast<char>(0xC0 | (cp >> 6));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    s += static_cast<char>(0xE0 | (cp >> 12));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return s;
}

/// GPT-2's reversible byte -> printable code point table.
inline std::vector<std::string> byte_encoder() {
  std::vector<int> bs;
  for (int b = '!'; b <= '~'; ++b) bs.push_back(b);
  for (int b = 0xA1; b <= 0xAC; ++b) bs.push_back(b);
  for (int b = 0xAE; b <= 0xFF; ++b) bs.push_back(b);
  std::vector<unsigned> cp(256, 0);
  std::vector<bool> seen(256, false);
  for (int b : bs) {
    cp[static_cast<std::size_t>(b)] = static_cast<unsigned>(b);
    seen[static_cast<std::size_t>(b)] = true;
  }
  unsigned n = 0;
  for (int b = 0; b < 256; ++b) {
    if (!seen[static_cast<std::size_t>(b)]) cp[static_cast<std::size_t>(b)] = 256 + n++;
  }
  std::vector<std::string> out(256);
  for (int b = 0; b < 256; ++b) out[static_cast<std::size_t>(b)] = utf8(cp[static_cast<std::size_t>(b)]);
  return out;
}

enum class CharClass { space, letter, digit, other };

inline CharClass classify(unsigned char c) {
  if (std::isspace(c)) return CharClass::space;
  if (std::isalpha(c) || c >= 0x80) return CharClass::letter;  // non-ASCII bytes grouped with letters
  if (std::isdigit(c)) return CharClass::digit;
  return CharClass::other;
}

/// GPT-2 pre-tokenization, with Unicode categories approximated on bytes.
inline std::vector<std::string> pretokenize(std::string_view s) {
  std::vector<std::string> out;
  const std::size_t n = s.size();
  std::size_t i = 0;
  auto cls = [&](std::size_t k) { return classify(static_cast<unsigned char>(s[k])); };
  while (i < n) {
    if (s[i] == '\'') {
      static const char* contractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
      bool matched = false;
      for (const char* c : contractions) {
        std::string_view cv(c);
        if (s.substr(i, cv.size()) == cv) {
          out.emplace_back(cv);
          i += cv.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    std::size_t j = i;
    if (s[j] == ' ' && j + 1 < n && cls(j + 1) != CharClass::space) ++j;
    if (cls(j) != CharClass::space) {
      const CharClass c = cls(j);
      std::size_t k = j;
      while (k < n && cls(k) == c) ++k;
      out.emplace_back(s.substr(i, k - i));
      i = k;
      continue;
    }
    std::size_t k = i;
    while (k < n && cls(k) == CharClass::space) ++k;
    if (k == n) {
      out.emplace_back(s.substr(i, k - i));
      i = k;
    } else if (k - i >= 2) {
      out.emplace_back(s.substr(i, k - i - 1));
      i = k - 1;
    } else {
      out.emplace_back(s.substr(i, 1));
      i = k;
    }
  }
  return out;
}

/// Split a UTF-8 string into code point strings.
inline std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    const std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace detail

/// Byte-level BPE compatible with GPT-2 vocab.json/merges.txt files.
class BpeTokenizer final : public Tokenizer {
 public:
  BpeTokenizer(std::unordered_map<std::string, int> vocab, std::vector<std::pair<std::string, std::string>> merges)
      : vocab_(std::move(vocab)), byte_encoder_(detail::byte_encoder()) {
    for (std::size_t r = 0; r < merges.size(); ++r) ranks_[merges[r].first + " " + merges[r].second] = static_cast<int>(r);
    for (const auto& [_, id] : vocab_) max_id_ = std::max(max_id_, id);
  }

  static BpeTokenizer from_files(const std::string& vocab_json, const std::string& merges_txt) {
    std::ifstream vf(vocab_json);
    if (!vf) throw std::runtime_error("cannot open " + vocab_json);
    nlohmann::json j = nlohmann::json::parse(vf);
    std::unordered_map<std::string, int> vocab;
    for (auto it = j.begin(); it != j.end(); ++it) vocab[it.key()] = it.value().get<int>();
    std::ifstream mf(merges_txt);
    if (!mf) throw std::runtime_error("cannot open " + merges_txt);
    std::vector<std::pair<std::string, std::string>> merges;
    std::string line;
    while (std::getline(mf, line)) {
      if (line.empty() || line.rfind("#version", 0) == 0) continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw std::runtime_error("malformed merges line: " + line);
      merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return BpeTokenizer(std::move(vocab), std::move(merges));
  }

  std::vector<int> encode(std::string_view text) const override {
    std::vector<int> ids;
    for (const auto& piece : detail::pretokenize(text)) {
      std::string mapped;
      for (unsigned char c : piece) mapped += byte_encoder_[c];
      for (const auto& tok : bpe(mapped)) {
        auto it = vocab_.find(tok);
        if (it == vocab_.end()) throw std::runtime_error("token missing from vocabulary: " + tok);
        ids.push_back(it->second);
      }
    }
    return ids;
  }

  int vocab_size() const override { return max_id_ + 1; }

 private:
  std::vector<std::string> bpe(const std::string& word) const {
    std::vector<std::string> parts = detail::utf8_chars(word);
    while (parts.size() > 1) {
      int best_rank = std::numeric_limits<int>::max();
      std::size_t best = 0;
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        auto it = ranks_.find(parts[i] + " " + parts[i + 1]);
        if (it != ranks_.end() && it->second < best_rank) {
          best_rank = it->second;
          best = i;
        }
      }
      if (best_rank == std::numeric_limits<int>::max()) break;
      const std::string a = parts[best], b = parts[best + 1];
      std::vector<std::string> next;
      for (std::size_t i = 0; i < parts.size();) {
        if (i + 1 < parts.size() && parts[i] == a && parts[i + 1] == b) {
          next.push_back(a + b);
          i += 2;
        } else {
          next.push_back(parts[i]);
          ++i;
        }
      }
      parts = std::move(next);
    }
    return parts;
  }

  std::unordered_map<std::string, int> vocab_;
  std::unordered_map<std::string, int> ranks_;
  std::vector<std::string> byte_encoder_;
  int max_id_ = -1;
};

}  // namespace medts::backbone
