#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibsim/common.hpp"
#include "vibsim/tensor.hpp"

namespace vibsim::nn {

// Parameter sets travel as {"params": [{"id", "shape", "values"}]}.
inline nlohmann::json params_to_json(const std::vector<const Parameter*>& params) {
    nlohmann::json list = nlohmann::json::array();
    for (const Parameter* p : params) {
        list.push_back({{"id", p->id},
                        {"shape", {p->value.rows, p->value.cols}},
                        {"values", p->value.data}});
    }
    return nlohmann::json{{"params", list}};
}

inline void params_from_json(const nlohmann::json& doc, std::vector<Parameter*> params) {
    if (!doc.contains("params")) throw ConfigError("parameter file: missing 'params' key");
    const nlohmann::json& list = doc["params"];
    if (list.size() != params.size()) {
        throw ConfigError("parameter file: expected " + std::to_string(params.size()) +
                          " entries, found " + std::to_string(list.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const nlohmann::json& e = list[i];
        Parameter& p = *params[i];
        if (e.at("id").get<std::string>() != p.id) {
            throw ConfigError("parameter file: id mismatch, expected '" + p.id + "', found '" +
                              e.at("id").get<std::string>() + "'");
        }
        int r = e.at("shape")[0].get<int>();
        int c = e.at("shape")[1].get<int>();
        if (r != p.value.rows || c != p.value.cols) {
            throw ConfigError("parameter file: shape mismatch for '" + p.id + "'");
        }
        p.value.data = e.at("values").get<std::vector<double>>();
        if (p.value.data.size() != static_cast<std::size_t>(r) * c) {
            throw ConfigError("parameter file: value count mismatch for '" + p.id + "'");
        }
    }
}

inline void save_params(const std::string& path, const std::vector<const Parameter*>& params) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << params_to_json(params).dump(2) << "\n";
}

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    nlohmann::json doc;
    in >> doc;
    return doc;
}

inline void load_params(const std::string& path, std::vector<Parameter*> params) {
    params_from_json(load_json_file(path), std::move(params));
}

}  // namespace vibsim::nn
