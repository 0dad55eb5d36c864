#pragma once

// CE/IE evaluation subsets. Both share one draw of positives; the negatives
// of CE are self-consistent errors and those of IE inconsistent errors, with
// the larger error class downsampled to the size of the smaller.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sce/core/error.hpp"
#include "sce/core/records.hpp"
#include "sce/core/rng.hpp"
#include "sce/core/types.hpp"

namespace sce::evalkit {

enum class Balance { one_to_one, all_positives };

inline std::string_view to_string(Balance b) { return b == Balance::one_to_one ? "1:1" : "all_positives"; }

inline Balance parse_balance(std::string_view s) {
  if (s == "1:1") return Balance::one_to_one;
  if (s == "all_positives") return Balance::all_positives;
  throw ArgumentError("balance must be \"1:1\" or \"all_positives\", got \"" + std::string(s) + "\"");
}

struct SubsetSide {
  std::vector<std::string> pos;
  std::vector<std::string> neg;
  bool operator==(const SubsetSide&) const = default;
};

struct Split {
  std::vector<std::string> train, val, test;
  bool operator==(const Split&) const = default;
};

// Stratified train/val/test partition of a subset: shared positives split
// once, each subset's negatives split on their own.
struct SubsetSplits {
  Split pos;
  Split ce_neg;
  Split ie_neg;
  bool operator==(const SubsetSplits&) const = default;
};

struct SubsetPair {
  SubsetSide ce;
  SubsetSide ie;
  std::uint64_t seed = 0;
  Balance balance = Balance::one_to_one;
  SubsetSplits splits;

  const SubsetSide& side(Subset s) const { return s == Subset::CE ? ce : ie; }
  const Split& neg_split(Subset s) const { return s == Subset::CE ? splits.ce_neg : splits.ie_neg; }

  void validate() const {
    if (ce.neg.size() != ie.neg.size()) throw ArgumentError("CE and IE negative counts differ");
    if (ce.pos != ie.pos) throw ArgumentError("CE and IE positives differ");
    if (balance == Balance::one_to_one && ce.pos.size() != ce.neg.size())
      throw ArgumentError("positives and negatives are not balanced 1:1");
  }
  bool operator==(const SubsetPair&) const = default;
};

namespace detail {

inline std::vector<std::string> draw(std::vector<std::string> ids, std::size_t n, Rng& rng) {
  std::sort(ids.begin(), ids.end());
  if (n < ids.size()) {
    rng.shuffle(std::span<std::string>(ids));
    ids.resize(n);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

inline Split split_ids(std::vector<std::string> ids, double val_fraction, double test_fraction, Rng& rng,
                       const std::string& what) {
  if (ids.size() < 3)
    throw ArgumentError(what + ": need at least 3 items for a train/val/test split, have " +
                        std::to_string(ids.size()));
  std::sort(ids.begin(), ids.end());
  rng.shuffle(std::span<std::string>(ids));
  const auto m = static_cast<double>(ids.size());
  auto count = [&](double f) { return std::max<std::size_t>(1, static_cast<std::size_t>(m * f + 0.5)); };
  std::size_t n_val = count(val_fraction), n_test = count(test_fraction);
  while (n_val + n_test > ids.size() - 1) {
    if (n_val >= n_test && n_val > 1) --n_val;
    else if (n_test > 1) --n_test;
    else break;
  }
  Split s;
  s.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test),
               ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), ids.end());
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

}  // namespace detail

struct SubsetOptions {
  std::uint64_t seed = 0;
  Balance balance = Balance::one_to_one;
  double val_fraction = 0.25;
  double test_fraction = 0.25;
  bool make_splits = false;  // needs at least 3 items per class
};

// Labels and classes are joined by question id; grade-C items and questions
// without a class are ignored.
inline SubsetPair build_subsets(const std::vector<CorrectnessRecord>& labels,
                                const std::vector<ErrorClassRecord>& classes, const SubsetOptions& opt = {}) {
  std::map<std::string, int> z;
  for (const auto& l : labels)
    if (auto v = l.z()) z[l.question_id] = *v;
  std::vector<std::string> correct, ce, ie;
  for (const auto& c : classes) {
    auto it = z.find(c.question_id);
    if (it == z.end()) continue;
    const bool is_error = it->second == 0;
    if (is_error == (c.error_class == ErrorClass::not_error))
      throw ArgumentError("class of '" + c.question_id + "' disagrees with its correctness label");
    switch (c.error_class) {
      case ErrorClass::not_error: correct.push_back(c.question_id); break;
      case ErrorClass::self_consistent: ce.push_back(c.question_id); break;
      case ErrorClass::inconsistent: ie.push_back(c.question_id); break;
    }
  }
  if (ce.empty()) throw ArgumentError("no self-consistent errors: cannot build the CE subset");
  if (ie.empty()) throw ArgumentError("no inconsistent errors: cannot build the IE subset");
  const std::size_t n = std::min(ce.size(), ie.size());
  if (opt.balance == Balance::one_to_one && correct.size() < n)
    throw ArgumentError("not enough correct answers: need " + std::to_string(n) + ", have " +
                        std::to_string(correct.size()));
  if (correct.empty()) throw ArgumentError("no correct answers: cannot build positives");

  Rng rng(opt.seed);
  SubsetPair out;
  out.seed = opt.seed;
  out.balance = opt.balance;
  const auto pos = detail::draw(correct, opt.balance == Balance::one_to_one ? n : correct.size(), rng);
  out.ce = {pos, detail::draw(ce, n, rng)};
  out.ie = {pos, detail::draw(ie, n, rng)};
  if (opt.make_splits) {
    out.splits.pos = detail::split_ids(pos, opt.val_fraction, opt.test_fraction, rng, "positives");
    out.splits.ce_neg = detail::split_ids(out.ce.neg, opt.val_fraction, opt.test_fraction, rng, "CE negatives");
    out.splits.ie_neg = detail::split_ids(out.ie.neg, opt.val_fraction, opt.test_fraction, rng, "IE negatives");
  }
  out.validate();
  return out;
}

// Ids with labels for one split of one subset: positives first, then negatives.
struct SplitView {
  std::vector<std::string> ids;
  std::vector<int> z;
};

enum class SplitPart { train, val, test };

inline SplitView split_view(const SubsetPair& p, Subset s, SplitPart part) {
  auto pick = [&](const Split& sp) -> const std::vector<std::string>& {
    return part == SplitPart::train ? sp.train : part == SplitPart::val ? sp.val : sp.test;
  };
  SplitView v;
  for (const auto& id : pick(p.splits.pos)) {
    v.ids.push_back(id);
    v.z.push_back(1);
  }
  for (const auto& id : pick(p.neg_split(s))) {
    v.ids.push_back(id);
    v.z.push_back(0);
  }
  return v;
}

// ---- JSON --------------------------------------------------------------------

inline ojson encode(const Split& s) { return ojson{{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

inline ojson encode(const SubsetPair& p) {
  ojson j;
  j["seed"] = p.seed;
  j["balance"] = std::string(to_string(p.balance));
  j["ce"] = ojson{{"pos", p.ce.pos}, {"neg", p.ce.neg}};
  j["ie"] = ojson{{"pos", p.ie.pos}, {"neg", p.ie.neg}};
  j["splits"] = ojson{{"pos", encode(p.splits.pos)}, {"ce_neg", encode(p.splits.ce_neg)},
                      {"ie_neg", encode(p.splits.ie_neg)}};
  return j;
}

inline SubsetPair decode_subset_pair(const nlohmann::json& j) {
  try {
    SubsetPair p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.balance = parse_balance(j.at("balance").get<std::string>());
    auto side = [&](const char* k) {
      return SubsetSide{j.at(k).at("pos").get<std::vector<std::string>>(),
                        j.at(k).at("neg").get<std::vector<std::string>>()};
    };
    auto split = [&](const char* k) {
      const auto& s = j.at("splits").at(k);
      return Split{s.at("train").get<std::vector<std::string>>(), s.at("val").get<std::vector<std::string>>(),
                   s.at("test").get<std::vector<std::string>>()};
    };
    p.ce = side("ce");
    p.ie = side("ie");
    p.splits = {split("pos"), split("ce_neg"), split("ie_neg")};
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid subsets document: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ParseError(std::string("invalid subsets document: ") + e.what());
  }
}

}  // namespace sce::evalkit
