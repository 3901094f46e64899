#pragma once
#include <stdexcept>
#include <string>
#include <vector>

#include "textspot/bezier.hpp"

// Ground-truth and script-table types shared by data ingestion, matching,
// losses, and evaluation.

namespace textspot {

struct ScriptSpec {
  std::string name;
  std::string alphabet;  // symbol at index i has class id i+1; class 0 is blank
  int classes = 0;       // recognition head width; alphabet size + 1 by default

  int resolved_classes() const { return classes > 0 ? classes : int(alphabet.size()) + 1; }

  // class id for a symbol, or -1 if not in this script
  int class_of(char symbol) const {
    auto pos = alphabet.find(symbol);
    return pos == std::string::npos ? -1 : int(pos) + 1;
  }
};

struct TextInstanceGT {
  Polyline center;  // N points in reading order
  Polyline top;     // empty in line-annotation mode
  Polyline bottom;
  std::string transcript;
  std::vector<int> labels;  // transcript as class ids under its script
  int script = 0;

  bool has_boundary() const { return !top.empty(); }
};

inline std::vector<int> transcript_labels(const std::string& transcript, const ScriptSpec& spec) {
  std::vector<int> ids;
  ids.reserve(transcript.size());
  for (char ch : transcript) {
    int c = spec.class_of(ch);
    if (c < 0)
      throw std::runtime_error("transcript symbol '" + std::string(1, ch) +
                               "' not in script '" + spec.name + "' alphabet");
    ids.push_back(c);
  }
  return ids;
}

// Script-type fallback when an annotation lacks a script id: majority vote
// of per-symbol table membership, ties to the lowest script index (the
// script list is kept in lexicographic order by the loader).
inline int infer_script(const std::string& transcript, const std::vector<ScriptSpec>& scripts) {
  if (scripts.empty()) throw std::runtime_error("infer_script: empty script table");
  std::vector<int> votes(scripts.size(), 0);
  for (char ch : transcript)
    for (size_t s = 0; s < scripts.size(); ++s)
      if (scripts[s].class_of(ch) >= 0) ++votes[s];
  int best = 0;
  for (size_t s = 1; s < scripts.size(); ++s)
    if (votes[s] > votes[size_t(best)]) best = int(s);
  return best;
}

}  // namespace textspot
