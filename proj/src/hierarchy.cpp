#include "avgopt/hierarchy.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace avgopt {

void HierarchySpec::validate() const {
  if (depth < 1) throw std::invalid_argument("hierarchy: depth must be >= 1");
  if (static_cast<int>(options_per_level.size()) != depth - 1) {
    throw std::invalid_argument("hierarchy: need one option count per level 1..depth-1");
  }
  for (int n : options_per_level) {
    if (n < 1) throw std::invalid_argument("hierarchy: option counts must be positive");
  }
  if (n_actions < 1) throw std::invalid_argument("hierarchy: n_actions must be positive");
  if (n_states < 1) throw std::invalid_argument("hierarchy: n_states must be positive");
}

int HierarchySpec::prefix_count(int level) const {
  int count = 1;
  for (int l = 1; l <= level; ++l) count *= options_at(l);
  return count;
}

int prefix_id(const HierarchySpec& spec, const OptionStack& stack, int level) {
  int id = 0;
  int stride = 1;
  for (int l = 1; l <= level; ++l) {
    id += stack.ids[l] * stride;
    stride *= spec.options_at(l);
  }
  return id;
}

int stack_id(const HierarchySpec& spec, const OptionStack& stack) {
  return prefix_id(spec, stack, spec.depth - 1);
}

OptionStack stack_from_id(const HierarchySpec& spec, int id) {
  OptionStack stack = OptionStack::root(spec);
  for (int l = 1; l <= spec.depth - 1; ++l) {
    stack.ids[l] = id % spec.options_at(l);
    id /= spec.options_at(l);
  }
  return stack;
}

namespace {

struct Layout {
  std::vector<int> policy_offset;       // index by level 1..depth
  std::vector<int> termination_offset;  // index by level 1..depth-1
  int total = 0;
};

Layout layout_of(const HierarchySpec& spec) {
  Layout lay;
  lay.policy_offset.assign(spec.depth + 1, 0);
  lay.termination_offset.assign(spec.depth, 0);
  int at = 0;
  for (int l = 1; l <= spec.depth; ++l) {
    lay.policy_offset[l] = at;
    at += spec.policy_contexts(l) * spec.choices_at(l);
  }
  for (int l = 1; l <= spec.depth - 1; ++l) {
    lay.termination_offset[l] = at;
    at += spec.termination_contexts(l);
  }
  lay.total = at;
  return lay;
}

void check_level(int level, int lo, int hi, const char* what) {
  if (level < lo || level > hi) {
    throw std::invalid_argument(std::string(what) + ": level " + std::to_string(level) + " out of range");
  }
}

}  // namespace

int param_count(const HierarchySpec& spec) { return layout_of(spec).total; }

ActorParams make_zero_params(const HierarchySpec& spec, double bound) {
  spec.validate();
  if (bound <= 0.0) throw std::invalid_argument("actor params: projection bound must be positive");
  ActorParams p;
  p.bound = bound;
  p.theta.assign(static_cast<std::size_t>(param_count(spec)), 0.0);
  return p;
}

int policy_param_index(const HierarchySpec& spec, int level, int state, int prefix, int choice) {
  check_level(level, 1, spec.depth, "policy params");
  int offset = 0;
  for (int l = 1; l < level; ++l) offset += spec.policy_contexts(l) * spec.choices_at(l);
  const int ctx = state * spec.prefix_count(level - 1) + prefix;
  return offset + ctx * spec.choices_at(level) + choice;
}

int termination_param_index(const HierarchySpec& spec, int level, int state, int prefix) {
  check_level(level, 1, spec.depth - 1, "termination params");
  int offset = 0;
  for (int l = 1; l <= spec.depth; ++l) offset += spec.policy_contexts(l) * spec.choices_at(l);
  for (int l = 1; l < level; ++l) offset += spec.termination_contexts(l);
  return offset + state * spec.prefix_count(level) + prefix;
}

std::string param_name(const HierarchySpec& spec, int index) {
  const Layout lay = layout_of(spec);
  for (int l = 1; l <= spec.depth; ++l) {
    const int size = spec.policy_contexts(l) * spec.choices_at(l);
    if (index >= lay.policy_offset[l] && index < lay.policy_offset[l] + size) {
      const int rel = index - lay.policy_offset[l];
      const int ctx = rel / spec.choices_at(l);
      const int choice = rel % spec.choices_at(l);
      const int state = ctx / spec.prefix_count(l - 1);
      const int prefix = ctx % spec.prefix_count(l - 1);
      return "pi" + std::to_string(l) + "[s" + std::to_string(state) + "|o" + std::to_string(prefix) + "][" +
             (l == spec.depth ? "a" : "o") + std::to_string(choice) + "]";
    }
  }
  for (int l = 1; l <= spec.depth - 1; ++l) {
    const int size = spec.termination_contexts(l);
    if (index >= lay.termination_offset[l] && index < lay.termination_offset[l] + size) {
      const int rel = index - lay.termination_offset[l];
      const int state = rel / spec.prefix_count(l);
      const int prefix = rel % spec.prefix_count(l);
      return "beta" + std::to_string(l) + "[s" + std::to_string(state) + "|o" + std::to_string(prefix) + "]";
    }
  }
  throw std::invalid_argument("param_name: index out of range");
}

std::string param_block(const HierarchySpec& spec, int index) {
  const Layout lay = layout_of(spec);
  for (int l = 1; l <= spec.depth; ++l) {
    const int size = spec.policy_contexts(l) * spec.choices_at(l);
    if (index >= lay.policy_offset[l] && index < lay.policy_offset[l] + size) return "pi" + std::to_string(l);
  }
  for (int l = 1; l <= spec.depth - 1; ++l) {
    const int size = spec.termination_contexts(l);
    if (index >= lay.termination_offset[l] && index < lay.termination_offset[l] + size) {
      return "beta" + std::to_string(l);
    }
  }
  throw std::invalid_argument("param_block: index out of range");
}

std::vector<double> policy_probs(const ActorParams& params, const HierarchySpec& spec, int level, int state,
                                 const OptionStack& context) {
  check_level(level, 1, spec.depth, "policy_probs");
  if (state < 0 || state >= spec.n_states) throw std::invalid_argument("policy_probs: invalid state");
  const int choices = spec.choices_at(level);
  const int base = policy_param_index(spec, level, state, prefix_id(spec, context, level - 1), 0);
  std::vector<double> probs(static_cast<std::size_t>(choices));
  double max_score = params.theta[base];
  for (int c = 1; c < choices; ++c) max_score = std::max(max_score, params.theta[base + c]);
  double total = 0.0;
  for (int c = 0; c < choices; ++c) {
    probs[c] = std::exp(params.theta[base + c] - max_score);
    total += probs[c];
  }
  for (double& p : probs) p /= total;
  return probs;
}

double termination_prob(const ActorParams& params, const HierarchySpec& spec, int level, int state,
                        const OptionStack& context) {
  check_level(level, 0, spec.depth, "termination_prob");
  if (level == 0) return 0.0;
  if (level == spec.depth) return 1.0;
  const int idx = termination_param_index(spec, level, state, prefix_id(spec, context, level));
  return 1.0 / (1.0 + std::exp(-params.theta[idx]));
}

ArrivalSample sample_arrival(const ActorParams& params, const HierarchySpec& spec, int state,
                             const OptionStack& incoming, Rng& rng) {
  ArrivalSample out;
  out.kept_level = 0;
  for (int l = spec.depth - 1; l >= 1; --l) {
    if (!rng.bernoulli(termination_prob(params, spec, l, state, incoming))) {
      out.kept_level = l;
      break;
    }
  }
  out.stack = incoming;
  for (int l = out.kept_level + 1; l <= spec.depth - 1; ++l) {
    out.stack.ids[l] = rng.categorical(policy_probs(params, spec, l, state, out.stack));
  }
  return out;
}

std::vector<double> prefix_arrival_distribution(const ActorParams& params, const HierarchySpec& spec,
                                                int state, const OptionStack& incoming, int level) {
  check_level(level, 1, spec.depth, "prefix_arrival_distribution");
  const int top = level - 1;  // prefixes through this level
  const int n_out = spec.prefix_count(top);

  // Weight of "levels above i terminated, level i continued", conditioned on
  // levels >= `level` having terminated. The root's weight absorbs the rest.
  std::vector<double> keep_weight(static_cast<std::size_t>(top) + 1);
  double deeper_terminated = 1.0;
  for (int i = top; i >= 0; --i) {
    const double beta = termination_prob(params, spec, i, state, incoming);
    keep_weight[i] = (1.0 - beta) * deeper_terminated;
    deeper_terminated *= beta;
  }

  std::vector<double> out(static_cast<std::size_t>(n_out), 0.0);
  OptionStack candidate = OptionStack::root(spec);
  for (int q = 0; q < n_out; ++q) {
    // decode digits of the candidate prefix
    int rest = q;
    for (int l = 1; l <= top; ++l) {
      candidate.ids[l] = rest % spec.options_at(l);
      rest /= spec.options_at(l);
    }
    // probability of re-selecting digits l..top, going deepest-first
    std::vector<double> reselect_from(static_cast<std::size_t>(top) + 2, 1.0);
    for (int l = top; l >= 1; --l) {
      const double p = policy_probs(params, spec, l, state, candidate)[candidate.ids[l]];
      reselect_from[l] = reselect_from[l + 1] * p;
    }
    int match = 0;
    while (match < top && candidate.ids[match + 1] == incoming.ids[match + 1]) ++match;
    double prob = 0.0;
    for (int i = 0; i <= match; ++i) prob += keep_weight[i] * reselect_from[i + 1];
    out[q] = prob;
  }
  return out;
}

void add_policy_log_grad(const ActorParams& params, const HierarchySpec& spec, int level, int state,
                         const OptionStack& context, int choice, double scale, std::vector<double>& out) {
  const std::vector<double> probs = policy_probs(params, spec, level, state, context);
  const int base = policy_param_index(spec, level, state, prefix_id(spec, context, level - 1), 0);
  for (int c = 0; c < spec.choices_at(level); ++c) {
    out[base + c] += scale * ((c == choice ? 1.0 : 0.0) - probs[c]);
  }
}

void add_termination_log_grad(const ActorParams& params, const HierarchySpec& spec, int level, int state,
                              const OptionStack& context, double scale, std::vector<double>& out) {
  const double beta = termination_prob(params, spec, level, state, context);
  const int idx = termination_param_index(spec, level, state, prefix_id(spec, context, level));
  out[idx] += scale * (1.0 - beta);
}

LogGradFeatures log_grad(const ActorParams& params, const HierarchySpec& spec, int state,
                         const OptionStack& stack, int action, int next_state) {
  const std::size_t dim = static_cast<std::size_t>(param_count(spec));
  LogGradFeatures f;
  f.action.assign(dim, 0.0);
  add_policy_log_grad(params, spec, spec.depth, state, stack, action, 1.0, f.action);
  f.option.resize(static_cast<std::size_t>(std::max(0, spec.depth - 1)));
  f.termination.resize(f.option.size());
  for (int l = 1; l <= spec.depth - 1; ++l) {
    f.option[l - 1].assign(dim, 0.0);
    add_policy_log_grad(params, spec, l, next_state, stack, stack.ids[l], 1.0, f.option[l - 1]);
    f.termination[l - 1].assign(dim, 0.0);
    add_termination_log_grad(params, spec, l, next_state, stack, 1.0, f.termination[l - 1]);
  }
  return f;
}

void FeatureMap::validate(const HierarchySpec& spec) const {
  if (mode == Mode::tabular) return;
  if (static_cast<int>(features.size()) != spec.depth) {
    throw std::invalid_argument("feature map: need one feature matrix per prefix level 0..depth-1");
  }
  for (int l = 0; l < spec.depth; ++l) {
    const DenseMatrix& m = features[l];
    if (m.rows != spec.n_states * spec.prefix_count(l) || m.cols < 1) {
      throw std::invalid_argument("feature map: level " + std::to_string(l) + " has wrong shape");
    }
    for (double v : m.data) {
      if (!std::isfinite(v)) throw std::invalid_argument("feature map: entries must be finite");
    }
  }
}

int FeatureMap::dimension(const HierarchySpec& spec, int level) const {
  if (mode == Mode::tabular) return spec.n_states * spec.prefix_count(level);
  return features[level].cols;
}

double FeatureMap::value(const HierarchySpec& spec, int level, int context,
                         std::span<const double> weights) const {
  if (mode == Mode::tabular) return weights[context];
  (void)spec;
  const DenseMatrix& m = features[level];
  double acc = 0.0;
  for (int j = 0; j < m.cols; ++j) acc += m.at(context, j) * weights[j];
  return acc;
}

void FeatureMap::accumulate(const HierarchySpec& spec, int level, int context, double scale,
                            std::span<double> weights) const {
  if (mode == Mode::tabular) {
    weights[context] += scale;
    return;
  }
  (void)spec;
  const DenseMatrix& m = features[level];
  for (int j = 0; j < m.cols; ++j) weights[j] += scale * m.at(context, j);
}

std::string params_to_json(const ActorParams& params, const HierarchySpec& spec) {
  nlohmann::json j;
  j["depth"] = spec.depth;
  j["options_per_level"] = spec.options_per_level;
  j["n_actions"] = spec.n_actions;
  j["n_states"] = spec.n_states;
  j["bound"] = params.bound;
  for (int l = 1; l <= spec.depth; ++l) {
    auto block = nlohmann::json::array();
    for (int ctx = 0; ctx < spec.policy_contexts(l); ++ctx) {
      std::vector<double> row(static_cast<std::size_t>(spec.choices_at(l)));
      const int state = ctx / spec.prefix_count(l - 1);
      const int prefix = ctx % spec.prefix_count(l - 1);
      for (int c = 0; c < spec.choices_at(l); ++c) {
        row[c] = params.theta[policy_param_index(spec, l, state, prefix, c)];
      }
      block.push_back(std::move(row));
    }
    j["policy"][std::to_string(l)] = std::move(block);
  }
  for (int l = 1; l <= spec.depth - 1; ++l) {
    std::vector<double> block(static_cast<std::size_t>(spec.termination_contexts(l)));
    for (int ctx = 0; ctx < spec.termination_contexts(l); ++ctx) {
      const int state = ctx / spec.prefix_count(l);
      const int prefix = ctx % spec.prefix_count(l);
      block[ctx] = params.theta[termination_param_index(spec, l, state, prefix)];
    }
    j["termination"][std::to_string(l)] = std::move(block);
  }
  return j.dump(2);
}

ActorParams params_from_json(const HierarchySpec& spec, const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("depth").get<int>() != spec.depth || j.at("n_actions").get<int>() != spec.n_actions ||
      j.at("n_states").get<int>() != spec.n_states ||
      j.at("options_per_level").get<std::vector<int>>() != spec.options_per_level) {
    throw std::invalid_argument("params json: hierarchy shape mismatch");
  }
  ActorParams params = make_zero_params(spec, j.value("bound", 50.0));
  for (int l = 1; l <= spec.depth; ++l) {
    const auto& block = j.at("policy").at(std::to_string(l));
    if (static_cast<int>(block.size()) != spec.policy_contexts(l)) {
      throw std::invalid_argument("params json: policy block has wrong size");
    }
    for (int ctx = 0; ctx < spec.policy_contexts(l); ++ctx) {
      const int state = ctx / spec.prefix_count(l - 1);
      const int prefix = ctx % spec.prefix_count(l - 1);
      for (int c = 0; c < spec.choices_at(l); ++c) {
        params.theta[policy_param_index(spec, l, state, prefix, c)] = block[ctx][c].get<double>();
      }
    }
  }
  for (int l = 1; l <= spec.depth - 1; ++l) {
    const auto& block = j.at("termination").at(std::to_string(l));
    for (int ctx = 0; ctx < spec.termination_contexts(l); ++ctx) {
      const int state = ctx / spec.prefix_count(l);
      const int prefix = ctx % spec.prefix_count(l);
      params.theta[termination_param_index(spec, l, state, prefix)] = block[ctx].get<double>();
    }
  }
  for (double v : params.theta) {
    if (!std::isfinite(v) || std::fabs(v) > params.bound) {
      throw std::invalid_argument("params json: weights must be finite and inside the projection box");
    }
  }
  return params;
}

}  // namespace avgopt
