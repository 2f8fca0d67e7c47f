#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace pderank {

using UserId = std::int32_t;
using ItemId = std::int32_t;

// Row-major so that one embedding is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Backbone { kMF, kLGCN };
enum class RiskKind { kPDE, kWD, kPairwiseANS };
enum class OptimizerKind { kSGD, kAdam };

inline constexpr double kNoClip = std::numeric_limits<double>::infinity();

std::string_view to_string(Backbone b);
std::string_view to_string(RiskKind r);
std::string_view to_string(OptimizerKind o);

// Parsers accept the CLI spellings ("mf", "lgcn", "pde", "wd", "pairwise-ans",
// "sgd", "adam") and throw std::invalid_argument otherwise.
Backbone parse_backbone(std::string_view s);
RiskKind parse_risk(std::string_view s);
OptimizerKind parse_optimizer(std::string_view s);

}  // namespace pderank
