#include "spheretrain/mup.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spheretrain {

std::vector<MupRule> default_mup_rules() {
    return {
        {"*lambda*", LrFormula::Fixed, false},
        {"*.bias", LrFormula::Fixed, false},
        {"*pos_embed*", LrFormula::Fixed, true},
        {"*modulation.2.weight", LrFormula::MatrixReduced, true},
        {"*final_proj.weight", LrFormula::MatrixReduced, true},
        {"blocks.*unified.weight", LrFormula::MatrixFull, false},
        {"blocks.*.weight", LrFormula::MatrixReduced, false},
        {"*.weight", LrFormula::MatrixFull, false},
        {"*", LrFormula::Fixed, false},
    };
}

bool glob_match(const std::string& pattern, const std::string& name) {
    // Iterative glob with backtracking over the last '*'.
    std::size_t p = 0, n = 0;
    std::size_t star = std::string::npos, mark = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
            ++p;
            ++n;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = n;
        } else if (star != std::string::npos) {
            p = star + 1;
            n = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

RuleDecision decide_rule(const std::string& name, int fan_in, double base_lr,
                         const std::vector<MupRule>& rules) {
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (!glob_match(rules[i].pattern, name)) continue;
        RuleDecision d;
        d.rule_index = static_cast<int>(i);
        d.zero_init = rules[i].zero_init;
        switch (rules[i].formula) {
            case LrFormula::MatrixFull:
                require(fan_in >= 1, "decide_rule: matrix rule needs fan_in for " + name);
                d.lr_multiplier = base_lr / static_cast<double>(fan_in);
                break;
            case LrFormula::MatrixReduced:
                require(fan_in >= 1, "decide_rule: matrix rule needs fan_in for " + name);
                d.lr_multiplier = 0.1 * base_lr / static_cast<double>(fan_in);
                break;
            case LrFormula::Fixed:
                d.lr_multiplier = 0.01 * base_lr;
                break;
        }
        return d;
    }
    throw ConfigError("no learning-rate rule matches parameter '" + name + "'");
}

MupRuleSet assign_rules(std::vector<ParamTensor>& params, int width, double base_lr,
                        const std::vector<MupRule>& rules) {
    require(width >= 1, "assign_rules: width must be >= 1");
    for (ParamTensor& p : params) {
        const RuleDecision d = decide_rule(p.name, p.value.cols, base_lr, rules);
        p.lr_multiplier = d.lr_multiplier;
        p.zero_init = d.zero_init;
    }
    MupRuleSet rs;
    rs.base_lr = base_lr;
    rs.width = width;
    rs.rules = rules;
    return rs;
}

double scale_lr(double base_lr, long batch, long batch_ref, long steps, long steps_ref) {
    require(batch >= 1 && batch_ref >= 1 && steps >= 1 && steps_ref >= 1,
            "scale_lr: counts must be >= 1");
    return base_lr * std::sqrt(static_cast<double>(batch) / static_cast<double>(batch_ref)) *
           std::sqrt(static_cast<double>(steps_ref) / static_cast<double>(steps));
}

bool band_exempt_name(const std::string& name) {
    return name.find("lambda") != std::string::npos ||
           name.find("modulation") != std::string::npos;
}

std::map<std::string, BandResult> band_report(const std::vector<DynamicsRecord>& trace,
                                              const BandSpec& band) {
    require(!trace.empty(), "band_report: empty trace");
    require(band.lower_factor > 0.0 && band.lower_factor < 1.0 && band.upper_factor > 1.0,
            "band_report: need 0 < lower < 1 < upper");

    std::map<std::string, BandResult> report;
    for (const DynamicsRecord& rec : trace) {
        for (const auto& [name, stats] : rec.per_param) {
            if (band_exempt_name(name)) {
                report[name].status = BandStatus::Exempt;
                continue;
            }
            auto& entry = report[name];
            if (entry.status == BandStatus::Escaped) continue;
            const auto ref_it = band.reference.find(name);
            require(ref_it != band.reference.end(), "band_report: no reference for " + name);
            double ref = ref_it->second;
            if (band.schedule) {
                ref *= lr_at(rec.step, *band.schedule) / band.schedule->base_lr;
            }
            if (stats.update_rms < band.lower_factor * ref ||
                stats.update_rms > band.upper_factor * ref) {
                entry.status = BandStatus::Escaped;
                entry.escape_step = rec.step;
            }
        }
    }
    return report;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    require(ec == std::errc(), "format_double: conversion failed");
    return std::string(buf, ptr);
}

void write_trace_csv(const std::string& path, const std::vector<DynamicsRecord>& trace) {
    std::ofstream out(path, std::ios::binary);  // binary: exactly '\n', never '\r\n'
    if (!out) throw IoError("write_trace_csv: cannot open " + path);
    out << "step,param,grad_norm,weight_norm,update_rms,activation_rms\n";
    for (const DynamicsRecord& rec : trace) {
        for (const auto& [name, s] : rec.per_param) {
            out << rec.step << ',' << name << ',' << format_double(s.grad_norm) << ','
                << format_double(s.weight_norm) << ',' << format_double(s.update_rms) << ','
                << format_double(s.activation_rms) << '\n';
        }
    }
    if (!out) throw IoError("write_trace_csv: short write to " + path);
}

std::vector<DynamicsRecord> read_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_trace_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("read_trace_csv: empty file " + path);

    auto parse_error = [&path](long lineno, const std::string& why) {
        return IoError("read_trace_csv: " + path + ":" + std::to_string(lineno) + ": " + why);
    };

    std::vector<DynamicsRecord> trace;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::array<std::string, 6> fields;
        std::size_t start = 0;
        for (int f = 0; f < 6; ++f) {
            const std::size_t comma = line.find(',', start);
            if (f < 5 && comma == std::string::npos) throw parse_error(lineno, "expected 6 fields");
            fields[f] = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                      : comma - start);
            start = comma + 1;
        }
        long step = 0;
        ParamDynamics d;
        try {
            step = std::stol(fields[0]);
            d.grad_norm = std::stod(fields[2]);
            d.weight_norm = std::stod(fields[3]);
            d.update_rms = std::stod(fields[4]);
            d.activation_rms = std::stod(fields[5]);
        } catch (const std::exception&) {
            throw parse_error(lineno, "malformed number");
        }
        if (trace.empty() || trace.back().step != step) {
            trace.push_back(DynamicsRecord{step, {}});
        }
        trace.back().per_param[fields[1]] = d;
    }
    return trace;
}

std::string band_report_json(const std::map<std::string, BandResult>& report) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [name, res] : report) {
        nlohmann::json item;
        item["param"] = name;
        switch (res.status) {
            case BandStatus::InBand: item["status"] = "in_band"; break;
            case BandStatus::Escaped: item["status"] = "escaped"; break;
            case BandStatus::Exempt: item["status"] = "exempt"; break;
        }
        if (res.status == BandStatus::Escaped) item["escape_step"] = res.escape_step;
        arr.push_back(item);
    }
    return arr.dump(2);
}

}  // namespace spheretrain
