#include "tskd/lora/lora.hpp"

#include <algorithm>

#include "tskd/error.hpp"
#include "tskd/models/layers.hpp"

namespace tskd::lora {

namespace {

constexpr std::string_view kAdapterInfix = ".lora.";

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::pair<std::string, AdaptableLinearImpl*>> projections(torch::nn::Module& model) {
  std::vector<std::pair<std::string, AdaptableLinearImpl*>> out;
  for (const auto& item : model.named_modules("", /*include_self=*/false)) {
    if (auto* p = item.value()->as<AdaptableLinearImpl>()) out.emplace_back(item.key(), p);
  }
  return out;
}

AdaptableLinearImpl* find_projection(torch::nn::Module& model, const std::string& name) {
  for (auto& [n, p] : projections(model)) {
    if (n == name) return p;
  }
  return nullptr;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

}  // namespace

LoRAConfig LoRAConfig::from_experiment(const ExperimentConfig& cfg) {
  LoRAConfig c;
  c.rank = cfg.lora_rank;
  c.query = cfg.lora_query;
  c.value = cfg.lora_value;
  c.scope = cfg.lora_scope;
  return c;
}

std::vector<std::string> adaptable_names(torch::nn::Module& model) {
  std::vector<std::string> names;
  for (auto& [n, _] : projections(model)) names.push_back(n);
  return names;
}

std::vector<std::string> select_targets(torch::nn::Module& model, const LoRAConfig& cfg) {
  const auto available = adaptable_names(model);
  if (!cfg.explicit_targets.empty()) {
    for (const auto& t : cfg.explicit_targets) {
      if (std::find(available.begin(), available.end(), t) == available.end()) {
        throw ValidationError("LoRA target '" + t + "' not found; available: " + join(available));
      }
    }
    return cfg.explicit_targets;
  }
  if (!cfg.query && !cfg.value) throw ValidationError("LoRA target set is empty");
  std::vector<std::string> out;
  for (const auto& n : available) {
    if (cfg.scope == LoraScope::encoder_only && n.rfind("encoder.", 0) != 0) continue;
    if ((cfg.query && ends_with(n, ".q")) || (cfg.value && ends_with(n, ".v"))) out.push_back(n);
  }
  if (out.empty()) {
    throw ValidationError("no query/value projections match the LoRA config; available: " + join(available));
  }
  return out;
}

std::vector<std::string> inject(torch::nn::Module& model, const LoRAConfig& cfg, std::uint64_t init_seed) {
  if (cfg.rank < 1) throw ValidationError("LoRA rank must be >= 1");
  const auto targets = select_targets(model, cfg);
  for (const auto& name : targets) {
    auto* p = find_projection(model, name);
    const auto d = p->weight.size(0);
    if (p->weight.size(1) != d) throw ValidationError("LoRA target '" + name + "' is not square");
    if (cfg.rank > d / 2) {
      throw ValidationError("LoRA rank " + std::to_string(cfg.rank) + " exceeds d/2 = " + std::to_string(d / 2) +
                            " for '" + name + "'");
    }
    if (p->has_adapter()) throw ValidationError("'" + name + "' already carries an adapter");
  }

  for (auto& param : model.parameters(/*recurse=*/true)) param.requires_grad_(false);

  auto gen = at::make_generator<at::CPUGeneratorImpl>(init_seed);
  torch::NoGradGuard no_grad;
  for (const auto& name : targets) {
    auto* p = find_projection(model, name);
    const auto d = p->weight.size(0);
    LoraAdapter adapter(d, cfg.rank);
    adapter->A.normal_(0.0, 0.01, gen);
    adapter->B.zero_();
    p->attach_adapter(adapter);
  }
  return targets;
}

void merge(torch::nn::Module& model) {
  bool any = false;
  torch::NoGradGuard no_grad;
  for (auto& [name, p] : projections(model)) {
    if (!p->has_adapter()) continue;
    any = true;
    auto adapter = p->detach_adapter();
    p->weight.add_(adapter->delta().to(p->weight.dtype()));
  }
  if (!any) throw ValidationError("merge: model has no adapters");
}

std::vector<AdapterPair> adapters(torch::nn::Module& model) {
  std::vector<AdapterPair> out;
  for (auto& [name, p] : projections(model)) {
    if (p->has_adapter()) out.push_back({p->adapter->A, p->adapter->B, p->adapter->rank(), name});
  }
  return out;
}

bool has_adapters(torch::nn::Module& model) {
  for (auto& [_, p] : projections(model)) {
    if (p->has_adapter()) return true;
  }
  return false;
}

TrainableReport trainable_parameter_report(torch::nn::Module& model) {
  TrainableReport r;
  for (const auto& item : model.named_parameters(/*recurse=*/true)) {
    if (item.key().find(kAdapterInfix) != std::string::npos) {
      r.adapter_count += item.value().numel();
    } else {
      r.base_frozen_count += item.value().numel();
    }
  }
  r.ratio = r.base_frozen_count > 0 ? static_cast<double>(r.adapter_count) / r.base_frozen_count : 0.0;
  return r;
}

std::int64_t expected_adapter_params(torch::nn::Module& model, const LoRAConfig& cfg) {
  std::int64_t total = 0;
  for (const auto& name : select_targets(model, cfg)) {
    total += 2 * find_projection(model, name)->weight.size(0) * cfg.rank;
  }
  return total;
}

std::map<std::string, torch::Tensor> adapter_tensors(torch::nn::Module& model) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& a : adapters(model)) {
    out.emplace("lora/" + a.target_name + "/A", a.A);
    out.emplace("lora/" + a.target_name + "/B", a.B);
  }
  return out;
}

CheckpointBundle to_bundle(torch::nn::Module& model, CheckpointMetadata metadata) {
  CheckpointBundle bundle;
  for (const auto& item : model.named_parameters(true)) {
    if (item.key().find(kAdapterInfix) != std::string::npos) continue;
    bundle.tensors.emplace(item.key(), item.value().detach().clone());
  }
  for (const auto& item : model.named_buffers(true)) bundle.tensors.emplace(item.key(), item.value().detach().clone());
  for (const auto& [name, t] : adapter_tensors(model)) bundle.tensors.emplace(name, t.detach().clone());
  bundle.metadata = std::move(metadata);
  return bundle;
}

void load_bundle(torch::nn::Module& model, const CheckpointBundle& bundle) {
  std::map<std::string, std::int64_t> ranks;
  for (const auto& [name, t] : bundle.tensors) {
    if (name.rfind("lora/", 0) == 0 && ends_with(name, "/A")) {
      ranks[name.substr(5, name.size() - 7)] = t.size(1);
    }
  }
  CheckpointBundle dotted;
  dotted.metadata = bundle.metadata;
  for (const auto& [name, t] : bundle.tensors) {
    if (name.rfind("lora/", 0) != 0) {
      dotted.tensors.emplace(name, t);
      continue;
    }
    const auto slash = name.rfind('/');
    dotted.tensors.emplace(name.substr(5, slash - 5) + ".lora." + name.substr(slash + 1), t);
  }
  for (const auto& [target, rank] : ranks) {
    auto* p = find_projection(model, target);
    if (!p) throw IntegrityError("checkpoint adapter targets unknown projection '" + target + "'");
    if (!p->has_adapter()) p->attach_adapter(LoraAdapter(p->weight.size(0), rank));
  }
  load_module_strict(model, dotted);
}

}  // namespace tskd::lora
