#pragma once

#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "pader/fixed_point.hpp"

namespace pader {

enum class Party : std::uint8_t { A, B };  // A holds the secret key, B evaluates

inline const char* to_string(Party p) { return p == Party::A ? "A" : "B"; }
inline Party other(Party p) { return p == Party::A ? Party::B : Party::A; }

class Circuit;

struct InputGate {
  Party owner = Party::A;
  std::string var;
  std::optional<double> constant;  // literal coefficient introduced by `owner`
};
struct AddGate {};
struct MulGate {};
struct LocalExprGate {
  Party owner = Party::A;
  std::shared_ptr<const Circuit> expr;  // evaluated by `owner` over its own inputs
};

using GateKind = std::variant<InputGate, AddGate, MulGate, LocalExprGate>;
using Assignments = std::map<std::string, double>;
using LevelMap = std::vector<unsigned>;

inline bool is_binary(const GateKind& g) {
  return std::holds_alternative<AddGate>(g) || std::holds_alternative<MulGate>(g);
}

inline std::optional<Party> owner_of(const GateKind& g) {
  if (auto* in = std::get_if<InputGate>(&g)) return in->owner;
  if (auto* le = std::get_if<LocalExprGate>(&g)) return le->owner;
  return std::nullopt;
}

// Gates in topological order; every wire points to an earlier gate and the
// last gate is the output.
class Circuit {
 public:
  std::size_t input(Party owner, std::string var) { return push(InputGate{owner, std::move(var), {}}, {}); }

  std::size_t constant(Party owner, double value) {
    return push(InputGate{owner, "#" + std::to_string(gates_.size()), value}, {});
  }

  std::size_t add(std::size_t a, std::size_t b) { return push(AddGate{}, {a, b}); }
  std::size_t mul(std::size_t a, std::size_t b) { return push(MulGate{}, {a, b}); }

  std::size_t local(Party owner, std::shared_ptr<const Circuit> expr) {
    return push(LocalExprGate{owner, std::move(expr)}, {});
  }

  // Balanced binary Add tree.
  std::size_t sum(std::vector<std::size_t> terms) {
    if (terms.empty()) throw StructuralError("empty sum");
    while (terms.size() > 1) {
      std::vector<std::size_t> next;
      for (std::size_t i = 0; i + 1 < terms.size(); i += 2) next.push_back(add(terms[i], terms[i + 1]));
      if (terms.size() % 2 == 1) next.push_back(terms.back());
      terms = std::move(next);
    }
    return terms.front();
  }

  std::size_t push(GateKind kind, std::vector<std::size_t> wires) {
    check_gate(kind, wires, gates_.size());
    gates_.push_back(std::move(kind));
    wires_.push_back(std::move(wires));
    return gates_.size() - 1;
  }

  std::size_t size() const { return gates_.size(); }
  bool empty() const { return gates_.empty(); }
  std::size_t sink() const {
    if (gates_.empty()) throw StructuralError("empty circuit");
    return gates_.size() - 1;
  }
  const GateKind& gate(std::size_t i) const { return gates_.at(i); }
  const std::vector<std::size_t>& wires(std::size_t i) const { return wires_.at(i); }

  void validate() const {
    if (gates_.empty()) throw StructuralError("empty circuit");
    for (std::size_t i = 0; i < gates_.size(); ++i) check_gate(gates_[i], wires_[i], i);
  }

 private:
  static void check_gate(const GateKind& kind, const std::vector<std::size_t>& wires, std::size_t index) {
    const std::size_t arity = is_binary(kind) ? 2 : 0;
    if (wires.size() != arity) {
      throw StructuralError("gate " + std::to_string(index) + " has " + std::to_string(wires.size()) +
                            " input wires, expected " + std::to_string(arity));
    }
    for (auto w : wires) {
      if (w >= index) throw StructuralError("gate " + std::to_string(index) + " reads a later gate");
    }
    if (auto* le = std::get_if<LocalExprGate>(&kind)) {
      if (!le->expr) throw StructuralError("local expression without a body");
      le->expr->validate();
      for (std::size_t i = 0; i < le->expr->size(); ++i) {
        auto o = owner_of(le->expr->gate(i));
        if (o && *o != le->owner) throw StructuralError("local expression reads the other party's input");
      }
    }
  }

  std::vector<GateKind> gates_;
  std::vector<std::vector<std::size_t>> wires_;
};

namespace detail {

// The sub-circuit rooted at `root`, re-indexed.
inline std::shared_ptr<const Circuit> extract_subtree(const Circuit& c, std::size_t root) {
  std::vector<bool> keep(root + 1, false);
  keep[root] = true;
  for (std::size_t i = root + 1; i-- > 0;) {
    if (!keep[i]) continue;
    for (auto w : c.wires(i)) keep[w] = true;
  }
  auto out = std::make_shared<Circuit>();
  std::vector<std::size_t> remap(root + 1);
  for (std::size_t i = 0; i <= root; ++i) {
    if (!keep[i]) continue;
    std::vector<std::size_t> w;
    for (auto x : c.wires(i)) w.push_back(remap[x]);
    remap[i] = out->push(c.gate(i), std::move(w));
  }
  return out;
}

}  // namespace detail

// Collapses every single-owner subtree into a LocalExpr gate owned by that
// party and drops the gates only those subtrees consumed.
inline Circuit local_compute(const Circuit& c) {
  c.validate();
  const std::size_t n = c.size();
  std::vector<std::optional<Party>> local(n);
  std::vector<std::vector<std::size_t>> parents(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = c.gate(i);
    if (auto o = owner_of(g)) {
      local[i] = o;
    } else {
      const auto& w = c.wires(i);
      if (local[w[0]] && local[w[1]] && *local[w[0]] == *local[w[1]]) local[i] = local[w[0]];
    }
    for (auto w : c.wires(i)) parents[w].push_back(i);
  }
  std::vector<bool> removed(n, false);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    bool all_local = true;
    for (auto p : parents[i]) all_local = all_local && local[p].has_value();
    removed[i] = all_local;
  }
  Circuit out;
  std::vector<std::size_t> remap(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    const auto& g = c.gate(i);
    if (local[i] && is_binary(g)) {
      remap[i] = out.local(*local[i], detail::extract_subtree(c, i));
    } else if (local[i]) {
      remap[i] = out.push(g, {});
    } else {
      remap[i] = out.push(g, {remap[c.wires(i)[0]], remap[c.wires(i)[1]]});
    }
  }
  return out;
}

// A LocalExpr carries the natural level of its body, since its owner
// evaluates it in exact fixed point.
inline LevelMap compute_levels(const Circuit& c) {
  LevelMap levels(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& g = c.gate(i);
    const auto& w = c.wires(i);
    if (std::holds_alternative<InputGate>(g)) {
      levels[i] = 1;
    } else if (auto* le = std::get_if<LocalExprGate>(&g)) {
      levels[i] = compute_levels(*le->expr).back();
    } else if (std::holds_alternative<AddGate>(g)) {
      levels[i] = std::max(levels[w[0]], levels[w[1]]);
    } else {
      levels[i] = levels[w[0]] + levels[w[1]];
    }
  }
  return levels;
}

inline double input_value(const InputGate& in, const Assignments& values) {
  if (in.constant) return *in.constant;
  auto it = values.find(in.var);
  if (it == values.end()) throw ParameterError("no assignment for input '" + in.var + "'");
  return it->second;
}

inline double eval_plaintext(const Circuit& c, const Assignments& values) {
  c.validate();
  std::vector<double> v(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& g = c.gate(i);
    const auto& w = c.wires(i);
    if (auto* in = std::get_if<InputGate>(&g)) v[i] = input_value(*in, values);
    else if (auto* le = std::get_if<LocalExprGate>(&g)) v[i] = eval_plaintext(*le->expr, values);
    else if (std::holds_alternative<AddGate>(g)) v[i] = v[w[0]] + v[w[1]];
    else v[i] = v[w[0]] * v[w[1]];
  }
  return v.back();
}

struct FixedValue {
  BigInt value;
  unsigned level = 1;
};

// Exact fixed-point evaluation mod `modulus`, as the owner of a local
// expression computes it.
inline FixedValue eval_fixed(const Circuit& c, const Assignments& values, const EncodingParams& params,
                             const BigInt& modulus) {
  std::vector<FixedValue> v(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& g = c.gate(i);
    const auto& w = c.wires(i);
    if (auto* in = std::get_if<InputGate>(&g)) {
      v[i] = {encode(input_value(*in, values), params, modulus), 1};
    } else if (auto* le = std::get_if<LocalExprGate>(&g)) {
      v[i] = eval_fixed(*le->expr, values, params, modulus);
    } else if (std::holds_alternative<AddGate>(g)) {
      const unsigned l = std::max(v[w[0]].level, v[w[1]].level);
      v[i] = {mod_floor(align_level(v[w[0]].value, params, modulus, v[w[0]].level, l) +
                            align_level(v[w[1]].value, params, modulus, v[w[1]].level, l),
                        modulus),
              l};
    } else {
      v[i] = {mod_floor(v[w[0]].value * v[w[1]].value, modulus), v[w[0]].level + v[w[1]].level};
    }
  }
  return v.back();
}

inline std::string dump(const Circuit& c, const LevelMap* levels = nullptr) {
  std::ostringstream os;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& g = c.gate(i);
    const auto& w = c.wires(i);
    os << "g" << i << " = ";
    if (auto* in = std::get_if<InputGate>(&g)) {
      os << "input " << to_string(in->owner) << ":" << in->var;
      if (in->constant) os << " const " << *in->constant;
    } else if (auto* le = std::get_if<LocalExprGate>(&g)) {
      os << "local " << to_string(le->owner) << " [" << le->expr->size() << " gates]";
    } else {
      os << (std::holds_alternative<AddGate>(g) ? "add" : "mul") << "(g" << w[0] << ", g" << w[1] << ")";
    }
    if (levels) os << " level=" << (*levels)[i];
    os << "\n";
  }
  return os.str();
}

}  // namespace pader
