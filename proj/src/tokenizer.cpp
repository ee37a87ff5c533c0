#include "latr/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "latr/corpus.hpp"

namespace latr {

namespace {

const char* kPadPiece = "<pad>";
const char* kEosPiece = "</s>";
const char* kUnkPiece = "<unk>";

std::string sentinel_piece(int l) { return "<extra_id_" + std::to_string(l) + ">"; }

// Corpus words that spell a reserved piece stay out of the vocabulary.
bool is_reserved_piece(const std::string& s) {
  if (s == kPadPiece || s == kEosPiece || s == kUnkPiece) return true;
  if (s.rfind("<extra_id_", 0) != 0 || s.back() != '>') return false;
  const std::string digits = s.substr(10, s.size() - 11);
  return !digits.empty() &&
         std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> pieces, int n_sentinels)
    : pieces_(std::move(pieces)), n_sentinels_(n_sentinels) {
  if (static_cast<int>(pieces_.size()) < n_sentinels_ + 3) {
    throw ValueError("vocabulary too small for sentinels and specials");
  }
  if (pieces_[kPadId] != kPadPiece || pieces_[kEosId] != kEosPiece ||
      pieces_[kUnkId] != kUnkPiece) {
    throw FormatError("vocabulary must start with <pad>, </s>, <unk>");
  }
  const int first_sentinel = size() - n_sentinels_;
  for (int l = 0; l < n_sentinels_; ++l) {
    if (pieces_[first_sentinel + l] != sentinel_piece(l)) {
      throw FormatError("vocabulary sentinel block malformed at id " +
                        std::to_string(first_sentinel + l));
    }
  }
  for (int i = 0; i < size(); ++i) {
    if (!piece_to_id_.emplace(pieces_[i], i).second) {
      throw FormatError("duplicate vocabulary piece: " + pieces_[i]);
    }
  }
  for (int i = 3; i < first_sentinel; ++i) {
    max_piece_len_ = std::max(max_piece_len_, pieces_[i].size());
  }
}

const std::string& Vocabulary::piece(int id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("piece id " + std::to_string(id) + " out of range");
  }
  return pieces_[id];
}

int Vocabulary::sentinel_id(int l) const {
  if (l < 0 || l >= n_sentinels_) {
    throw ValueError("sentinel " + std::to_string(l) + " exhausted: only " +
                     std::to_string(n_sentinels_) + " reserved");
  }
  return size() - n_sentinels_ + l;
}

bool Vocabulary::is_sentinel(int id) const {
  return id >= size() - n_sentinels_ && id < size();
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  const std::string lower = lowercase(text);
  const int first_sentinel = size() - n_sentinels_;
  std::vector<int> ids;
  size_t pos = 0;
  while (pos < lower.size()) {
    int matched = -1;
    const size_t longest = std::min(max_piece_len_, lower.size() - pos);
    for (size_t len = longest; len >= 1; --len) {
      const auto it = piece_to_id_.find(lower.substr(pos, len));
      if (it != piece_to_id_.end() && it->second >= 3 && it->second < first_sentinel) {
        matched = it->second;
        pos += len;
        break;
      }
    }
    if (matched < 0) {
      ids.push_back(kUnkId);
      ++pos;
    } else {
      ids.push_back(matched);
    }
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (const int id : ids) {
    if (id == kPadId || id == kEosId) continue;
    out += piece(id);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write vocabulary file " + path);
  for (const auto& p : pieces_) f << p << '\n';
  if (!f) throw IoError("short write to vocabulary file " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read vocabulary file " + path);
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(f, line)) pieces.push_back(line);
  // The sentinel count is the length of the trailing <extra_id_l> block; the
  // constructor verifies the indices are 0..n-1 in order.
  int n_sentinels = 0;
  while (n_sentinels < static_cast<int>(pieces.size()) &&
         pieces[pieces.size() - 1 - n_sentinels].rfind("<extra_id_", 0) == 0) {
    ++n_sentinels;
  }
  return Vocabulary(std::move(pieces), n_sentinels);
}

Vocabulary build_vocabulary(const std::vector<OcrDocument>& corpus, int max_size,
                            int n_sentinels) {
  if (max_size <= n_sentinels + 3) {
    throw ValueError("vocabulary max_size must exceed n_sentinels + 3");
  }
  if (corpus.empty()) throw EmptyDataError("cannot build a vocabulary from an empty corpus");

  std::map<char, int64_t> char_freq;
  std::map<std::string, int64_t> word_freq;
  for (const auto& doc : corpus) {
    const std::string text = lowercase(doc.joined_text());
    for (const char c : text) ++char_freq[c];
    std::string word;
    for (size_t i = 0; i <= text.size(); ++i) {
      if (i < text.size() && text[i] != ' ') {
        word += text[i];
      } else if (!word.empty()) {
        ++word_freq[word];
        word.clear();
      }
    }
  }

  std::vector<std::string> pieces{"<pad>", "</s>", "<unk>"};
  const int budget = max_size - n_sentinels - 3;

  std::vector<std::pair<std::string, int64_t>> chars;
  for (const auto& [c, n] : char_freq) chars.emplace_back(std::string(1, c), n);
  std::vector<std::pair<std::string, int64_t>> words(word_freq.begin(), word_freq.end());
  const auto by_rank = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  std::sort(chars.begin(), chars.end(), by_rank);
  std::sort(words.begin(), words.end(), by_rank);

  std::unordered_map<std::string, bool> taken;
  int used = 0;
  for (const auto& [piece, n] : chars) {
    if (used >= budget) break;
    pieces.push_back(piece);
    taken[piece] = true;
    ++used;
  }
  for (const auto& [piece, n] : words) {
    if (used >= budget) break;
    if (taken.count(piece)) continue;  // 1-char words already covered
    if (is_reserved_piece(piece)) continue;
    pieces.push_back(piece);
    taken[piece] = true;
    ++used;
  }
  for (int l = 0; l < n_sentinels; ++l) pieces.push_back(sentinel_piece(l));
  return Vocabulary(std::move(pieces), n_sentinels);
}

}  // namespace latr
