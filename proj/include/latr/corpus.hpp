#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "latr/errors.hpp"
#include "latr/rng.hpp"

namespace latr {

struct OcrWord {
  std::string text;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // pixel coordinates
};

// One page of OCR output: word strings with pixel boxes, already in reading
// order after ingestion.
struct OcrDocument {
  std::string id;
  int page_w = 0;
  int page_h = 0;
  std::vector<OcrWord> words;
  std::string image_path;  // optional

  std::string joined_text() const;
};

struct QaExample {
  std::string question;
  std::vector<std::string> answers;  // multiset, at least one
  OcrDocument ocr;
  std::string image_path;  // optional
};

enum class FilterReason { TooFewWords, Unreadable, TooManyErrors };

struct FilterVerdict {
  bool keep = true;
  std::set<FilterReason> reasons;
  double error_fraction = 0.0;
};

// 8-bit grayscale (PGM) or RGB (PPM) raster.
struct Image {
  int h = 0, w = 0, c = 1;
  std::vector<uint8_t> pixels;  // row-major HWC
};

// --- ingestion ---------------------------------------------------------------

// Parses the OCR-document JSON schema, clamps boxes to the page, drops
// empty-text words, and sorts into reading order.
OcrDocument ingest(const std::string& path);
OcrDocument ingest_json(const std::string& json_text, const std::string& origin);
std::string to_json(const OcrDocument& doc);

std::vector<QaExample> load_qa_jsonl(const std::string& path);
void save_qa_jsonl(const std::vector<QaExample>& examples, const std::string& path);

// --- reading order -----------------------------------------------------------

// Left-to-right, top-to-bottom permutation. Words share a line when their
// vertical centers differ by less than half the smaller box height
// (transitively); lines sort by mean center, words within a line by x0,
// ties by y0 then input index.
std::vector<size_t> reading_order(const std::vector<OcrWord>& words);
void sort_reading_order(OcrDocument& doc);

// --- quality filtering ---------------------------------------------------------

// True for words exempt from the dictionary check: integers, floats
// (12.5 / 12,5), currency amounts ($4.99, 4.99€), and dd/mm/yyyy,
// dd-mm-yyyy or mm/dd/yy dates.
bool is_numeric_like(const std::string& word);

int levenshtein(const std::string& a, const std::string& b);

class Dictionary {
 public:
  Dictionary() = default;
  explicit Dictionary(const std::vector<std::string>& words);
  static Dictionary load(const std::string& path);

  bool empty() const { return exact_.empty(); }
  bool contains_exact(const std::string& word) const;
  // Exact match or Levenshtein distance 1, with length-bucket pruning.
  bool matches_within_one(const std::string& word) const;

 private:
  std::unordered_set<std::string> exact_;
  std::vector<std::vector<std::string>> by_length_;
};

FilterVerdict idl_filter(const OcrDocument& doc, const Dictionary& dictionary);

// --- augmentation --------------------------------------------------------------

// Per word, with probability p, replaces one uniformly chosen character by a
// different uniformly random one from [a-z0-9]. Boxes and word count are
// untouched.
OcrDocument ocr_error_augment(const OcrDocument& doc, double p, Rng& rng);

OcrDocument shuffle_reading_order(const OcrDocument& doc, Rng& rng);

// --- synthetic corpus ------------------------------------------------------------

struct LayoutParams {
  int min_words = 10;
  int max_words = 200;
  int min_line_words = 3;  // grid width range (words per line)
  int max_line_words = 6;
  int page_w = 800;
  int page_h = 600;
  double rare_word_rate = 0.1;  // fraction of gibberish (out-of-list) words
  bool render_images = true;
  int image_size = 64;
  int n_phrases = 120;  // size of the fixed phrase table driving the text
};

struct SyntheticCorpus {
  std::vector<OcrDocument> docs;
  std::vector<Image> images;  // parallel to docs when rendered
  std::vector<std::string> dictionary;  // word list the generator drew from
};

const std::vector<std::string>& builtin_word_list();

// Grid/column documents with Zipf-weighted pseudo-sentences and disjoint
// boxes; optional 64x64 grayscale renders with per-word intensity
// hash(word) % 256. Deterministic in rng.
SyntheticCorpus generate_synthetic_corpus(int n_docs, const std::vector<std::string>& words,
                                          const LayoutParams& params, Rng& rng);

// --- spatial probes ---------------------------------------------------------------

enum class ProbeRelation { LeftOf, RightOf, Above, Below, Topmost };

struct SpatialProbe {
  ProbeRelation relation;
  std::string anchor;   // empty for Topmost
  std::string answer;
  QaExample qa;
};

std::string probe_question(ProbeRelation relation, const std::string& anchor);

// Templated geometry questions over uniquely-occurring anchor words with an
// unambiguous nearest neighbor in the stated direction. Answers replicate the
// target word 10 times, matching the VQA collection convention.
std::vector<SpatialProbe> generate_spatial_probes(const OcrDocument& doc);

// --- images ------------------------------------------------------------------------

void save_pnm(const Image& img, const std::string& path);
Image load_pnm(const std::string& path);

}  // namespace latr
