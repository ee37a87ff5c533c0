#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "latr/errors.hpp"

namespace latr {

struct OcrDocument;  // corpus.hpp

// Subword vocabulary with reserved sentinel mask tokens. Layout is fixed:
// ids 0..2 are <pad>, </s>, <unk>; content pieces follow; the final
// n_sentinels ids are <extra_id_0>.. <extra_id_{n-1}> in order.
class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kEosId = 1;
  static constexpr int kUnkId = 2;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> pieces, int n_sentinels);

  int size() const { return static_cast<int>(pieces_.size()); }
  int n_sentinels() const { return n_sentinels_; }
  const std::vector<std::string>& pieces() const { return pieces_; }
  const std::string& piece(int id) const;

  // Id of <extra_id_l>; throws ValueError when l is outside [0, n_sentinels)
  // (too many mask spans for the reserved block).
  int sentinel_id(int l) const;
  bool is_sentinel(int id) const;

  // Greedy longest-match segmentation over the lowercased text. Specials and
  // sentinels never match; characters outside the vocabulary map to <unk>.
  std::vector<int> encode(const std::string& text) const;

  // Concatenation of pieces; <pad>/</s> are dropped, sentinels render
  // literally, <unk> renders as its piece string.
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> piece_to_id_;
  int n_sentinels_ = 0;
  size_t max_piece_len_ = 0;
};

// Greedy frequency-ranked vocabulary over the corpus text (words joined by
// single spaces, lowercased): every single character seen, then whole words
// by descending frequency, lexicographic on ties, until
// max_size - n_sentinels - 3 content pieces are taken.
Vocabulary build_vocabulary(const std::vector<OcrDocument>& corpus, int max_size,
                            int n_sentinels);

std::string lowercase(const std::string& s);

}  // namespace latr
