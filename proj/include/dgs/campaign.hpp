#pragma once

// Campaign index (campaign.json): the list of case directories of one dataset
// and, once assigned, its case-level train/validation/test split.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgs/case_store.hpp"

namespace dgs {

struct CampaignIndex {
  std::filesystem::path root;         // directory holding campaign.json
  std::vector<std::string> case_dirs;  // relative to root
  std::optional<SplitAssignment> split;
  nlohmann::json raw;

  std::filesystem::path case_path(std::size_t i) const { return root / case_dirs.at(i); }
  std::size_t size() const { return case_dirs.size(); }
};

/// Accepts either the campaign directory or the campaign.json path.
CampaignIndex load_campaign(const std::filesystem::path& path);

/// Stores the split in campaign.json (rewrites the file).
void write_split(CampaignIndex& index, const SplitAssignment& split, const SplitRatios& ratios);

std::vector<CaseTrajectory> load_cases(const CampaignIndex& index, const std::vector<std::size_t>& which);

/// The stored split, or CaseError(InvalidInput) when none was assigned.
const SplitAssignment& require_split(const CampaignIndex& index);

}  // namespace dgs
