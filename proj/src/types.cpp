#include "pderank/types.hpp"

#include <stdexcept>
#include <string>

namespace pderank {

std::string_view to_string(Backbone b) {
  return b == Backbone::kMF ? "mf" : "lgcn";
}

std::string_view to_string(RiskKind r) {
  switch (r) {
    case RiskKind::kPDE:
      return "pde";
    case RiskKind::kWD:
      return "wd";
    case RiskKind::kPairwiseANS:
      return "pairwise-ans";
  }
  return "?";
}

std::string_view to_string(OptimizerKind o) {
  return o == OptimizerKind::kSGD ? "sgd" : "adam";
}

Backbone parse_backbone(std::string_view s) {
  if (s == "mf") return Backbone::kMF;
  if (s == "lgcn") return Backbone::kLGCN;
  throw std::invalid_argument("unknown backbone '" + std::string(s) + "' (expected mf, lgcn)");
}

RiskKind parse_risk(std::string_view s) {
  if (s == "pde") return RiskKind::kPDE;
  if (s == "wd") return RiskKind::kWD;
  if (s == "pairwise-ans") return RiskKind::kPairwiseANS;
  throw std::invalid_argument("unknown risk '" + std::string(s) +
                              "' (expected pde, wd, pairwise-ans)");
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSGD;
  if (s == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "' (expected sgd, adam)");
}

}  // namespace pderank
