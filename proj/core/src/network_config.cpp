#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lsanet/network.hpp"

namespace lsanet {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    LSANET_CHECK(allowed.count(it.key()), "config: unknown key \"" << it.key() << "\" in " << where);
}

}  // namespace

NetworkConfig parse_network_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(std::string("config: invalid JSON: ") + e.what());
  }
  LSANET_CHECK(j.is_object(), "config: top level must be a JSON object");
  reject_unknown_keys(j,
                      {"layers", "head_widths", "num_classes", "dropout_rate", "sfe_lift_widths",
                       "flags", "sdw_prerelu", "region_mean_valid_only", "sfe_projected_sum",
                       // sections consumed by the CLI, not by the network
                       "dataset", "train"},
                      "top level");
  NetworkConfig cfg;
  cfg.layers.clear();
  LSANET_CHECK(j.contains("layers") && j["layers"].is_array() && !j["layers"].empty(),
               "config: \"layers\" must be a non-empty array");
  for (const auto& lj : j["layers"]) {
    reject_unknown_keys(lj, {"N", "K", "radius", "F"}, "layer entry");
    LayerSpec ls;
    LSANET_CHECK(lj.contains("N") && lj.contains("K") && lj.contains("F"),
                 "config: layer entries need N, K and F");
    ls.n = lj["N"].get<int64_t>();
    ls.k = lj["K"].get<int>();
    ls.radius = lj.value("radius", 0.0f);
    ls.f = lj["F"].get<std::vector<int64_t>>();
    cfg.layers.push_back(std::move(ls));
  }
  if (j.contains("head_widths")) cfg.head_widths = j["head_widths"].get<std::vector<int64_t>>();
  if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<int>();
  if (j.contains("dropout_rate")) cfg.dropout_rate = j["dropout_rate"].get<double>();
  if (j.contains("sfe_lift_widths"))
    cfg.sfe_lift_widths = j["sfe_lift_widths"].get<std::vector<int64_t>>();
  if (j.contains("flags")) {
    const auto& fj = j["flags"];
    reject_unknown_keys(fj, {"use_sfe", "use_lsa", "use_region_encoder", "use_modulated_pool"},
                        "flags");
    cfg.use_sfe = fj.value("use_sfe", true);
    cfg.use_lsa = fj.value("use_lsa", true);
    cfg.use_region_encoder = fj.value("use_region_encoder", true);
    cfg.use_modulated_pool = fj.value("use_modulated_pool", true);
  }
  cfg.sdw_prerelu = j.value("sdw_prerelu", false);
  cfg.region_mean_valid_only = j.value("region_mean_valid_only", false);
  cfg.sfe_projected_sum = j.value("sfe_projected_sum", false);
  cfg.validate();
  return cfg;
}

NetworkConfig load_network_config(const std::string& path) {
  std::ifstream is(path);
  LSANET_CHECK(is.is_open(), "config: cannot open " << path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_network_config(ss.str());
}

std::string network_config_to_json(const NetworkConfig& cfg) {
  json j;
  j["layers"] = json::array();
  for (const LayerSpec& ls : cfg.layers)
    j["layers"].push_back({{"N", ls.n}, {"K", ls.k}, {"radius", ls.radius}, {"F", ls.f}});
  j["head_widths"] = cfg.head_widths;
  j["num_classes"] = cfg.num_classes;
  j["dropout_rate"] = cfg.dropout_rate;
  j["sfe_lift_widths"] = cfg.sfe_lift_widths;
  j["flags"] = {{"use_sfe", cfg.use_sfe},
                {"use_lsa", cfg.use_lsa},
                {"use_region_encoder", cfg.use_region_encoder},
                {"use_modulated_pool", cfg.use_modulated_pool}};
  j["sdw_prerelu"] = cfg.sdw_prerelu;
  j["region_mean_valid_only"] = cfg.region_mean_valid_only;
  j["sfe_projected_sum"] = cfg.sfe_projected_sum;
  return j.dump(2);
}

}  // namespace lsanet
