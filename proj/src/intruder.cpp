#include "tap/intruder.hpp"

#include <algorithm>

namespace tap {

Knowledge::Knowledge(const KeyRegistry* registry, std::size_t depth_bound)
    : registry_(registry), depth_bound_(depth_bound) {}

void Knowledge::add(const Term& t) { analyse({t}); }

void Knowledge::add_all(std::span<const Term> ts) { analyse({ts.begin(), ts.end()}); }

bool Knowledge::can_open_tag(const Digest& box_tag) const {
  if (registry_ != nullptr) {
    if (const Digest* priv = registry_->private_for(box_tag)) return key_tags_.contains(*priv);
  }
  return key_tags_.contains(box_tag);
}

void Knowledge::analyse(std::vector<Term> work) {
  while (!work.empty()) {
    Term t = std::move(work.back());
    work.pop_back();
    if (!known_.insert(t).second) continue;

    switch (t.tag()) {
      case Term::Tag::Cat:
        for (const auto& p : t.parts()) work.push_back(p);
        break;
      case Term::Tag::Sealed:
        if (can_open_tag(t.seal_tag())) {
          work.push_back(t.payload());
        } else {
          locked_.push_back(t);
        }
        break;
      case Term::Tag::Bytes:
        if (t.data().size() == kDigestSize && key_tags_.insert(key_tag(ByteView(t.data()))).second) {
          // A new key may unlock boxes seen earlier.
          auto it = std::partition(locked_.begin(), locked_.end(),
                                   [&](const Term& box) { return !can_open_tag(box.seal_tag()); });
          for (auto j = it; j != locked_.end(); ++j) work.push_back(j->payload());
          locked_.erase(it, locked_.end());
        }
        break;
      default:
        break;
    }
  }
}

bool Knowledge::derivable(const Term& t) const { return derivable(t, 1); }

bool Knowledge::derivable(const Term& t, std::size_t depth) const {
  if (known_.contains(t)) return true;
  if (depth > depth_bound_) return false;
  switch (t.tag()) {
    case Term::Tag::Atom:
    case Term::Tag::Id:
    case Term::Tag::Num:
      return true;  // public constants
    case Term::Tag::Nonce:
    case Term::Tag::Bytes:
      return false;  // cannot be guessed
    case Term::Tag::Cat:
      return std::all_of(t.parts().begin(), t.parts().end(),
                         [&](const Term& p) { return derivable(p, depth + 1); });
    case Term::Tag::Sealed:
      // Sealing needs the exact key whose tag the box carries.
      return key_tags_.contains(t.seal_tag()) && derivable(t.payload(), depth + 1);
  }
  return false;
}

std::size_t Knowledge::max_depth() const {
  std::size_t d = 0;
  for (const auto& t : known_) d = std::max(d, t.depth());
  return d;
}

std::set<Term> deduce_closure(const std::set<Term>& knowledge, const KeyRegistry* registry) {
  Knowledge k(registry);
  for (const auto& t : knowledge) k.add(t);
  return k.terms();
}

}  // namespace tap
