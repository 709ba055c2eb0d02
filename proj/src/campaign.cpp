#include "dgs/campaign.hpp"

#include "dgs/blob_io.hpp"

namespace dgs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::size_t> index_list(const json& j, std::size_t n, const char* what) {
  std::vector<std::size_t> out;
  for (const auto& v : j) {
    const auto i = v.get<std::size_t>();
    if (i >= n) throw CaseError(CaseError::Kind::IndexOutOfRange, std::string("split ") + what + " index out of range");
    out.push_back(i);
  }
  return out;
}

}  // namespace

CampaignIndex load_campaign(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "campaign.json" : path;
  if (!fs::exists(file)) throw CaseError(CaseError::Kind::MissingBlob, "no campaign index at " + file.string());
  CampaignIndex idx;
  idx.root = file.parent_path();
  idx.raw = blob::read_json(file);
  try {
    for (const auto& c : idx.raw.at("cases")) idx.case_dirs.push_back(c.at("dir").get<std::string>());
    if (idx.raw.contains("split")) {
      const auto& s = idx.raw.at("split");
      SplitAssignment a;
      a.seed = s.value("seed", std::uint64_t{0});
      a.train = index_list(s.at("train"), idx.size(), "train");
      a.validation = index_list(s.at("validation"), idx.size(), "validation");
      a.test = index_list(s.at("test"), idx.size(), "test");
      idx.split = a;
    }
  } catch (const json::exception& ex) {
    throw CaseError(CaseError::Kind::BadManifest, file.string() + ": " + ex.what());
  }
  if (idx.case_dirs.empty()) throw CaseError(CaseError::Kind::BadManifest, file.string() + ": campaign has no cases");
  return idx;
}

void write_split(CampaignIndex& index, const SplitAssignment& split, const SplitRatios& ratios) {
  index.raw["split"] = {{"seed", split.seed},
                        {"ratios", {{"train", ratios.train}, {"validation", ratios.validation}, {"test", ratios.test}}},
                        {"train", split.train},
                        {"validation", split.validation},
                        {"test", split.test}};
  index.split = split;
  blob::write_json(index.root / "campaign.json", index.raw);
}

std::vector<CaseTrajectory> load_cases(const CampaignIndex& index, const std::vector<std::size_t>& which) {
  std::vector<CaseTrajectory> out;
  out.reserve(which.size());
  for (auto i : which) {
    if (i >= index.size()) throw CaseError(CaseError::Kind::IndexOutOfRange, "case index out of range");
    out.push_back(load_case(index.case_path(i)));
  }
  return out;
}

const SplitAssignment& require_split(const CampaignIndex& index) {
  if (!index.split) {
    throw CaseError(CaseError::Kind::InvalidInput, "campaign at " + index.root.string() + " has no split; run `split` first");
  }
  return *index.split;
}

}  // namespace dgs
