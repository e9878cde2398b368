#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "hjbi/operator_model.hpp"

namespace hjbi {

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Canonical text of an operator (dimensions, expressions, control points).
std::string canonical_text(const HJBIOperator& op);
std::string canonical_text(const ControlSet& set);
std::string canonical_text(const CoefficientField& field);
/// sha256 of the canonical text.
std::string operator_hash(const HJBIOperator& op);

}  // namespace hjbi
