#include "sonodetect/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <fstream>
#include <sstream>

namespace sono::config {

std::string format_double(double v) {
    char buf[64];
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        std::snprintf(buf, sizeof(buf), "%.0f", v);
        return buf;
    }
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw UsageError("config: bad number '" + s + "'");
    return v;
}

int parse_int(const std::string& s) {
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') throw UsageError("config: bad integer '" + s + "'");
    return static_cast<int>(v);
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

struct Section {
    std::string name;
    std::vector<Field> fields;
};

template <typename Ref>
Field f_int(const std::string& key, Ref ref) {
    return {key, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
            [ref](RunConfig& c, const std::string& s) { ref(c) = parse_int(s); }};
}

template <typename Ref>
Field f_double(const std::string& key, Ref ref) {
    return {key, [ref](const RunConfig& c) { return format_double(ref(const_cast<RunConfig&>(c))); },
            [ref](RunConfig& c, const std::string& s) { ref(c) = parse_double(s); }};
}

// Optional double, spelled "auto" when unset.
template <typename Ref>
Field f_opt_double(const std::string& key, Ref ref) {
    return {key,
            [ref](const RunConfig& c) {
                const auto& opt = ref(const_cast<RunConfig&>(c));
                return opt ? format_double(*opt) : std::string("auto");
            },
            [ref](RunConfig& c, const std::string& s) {
                if (s == "auto") ref(c).reset();
                else ref(c) = parse_double(s);
            }};
}

template <typename Ref>
Field f_double_list(const std::string& key, Ref ref) {
    return {key,
            [ref](const RunConfig& c) {
                const auto& list = ref(const_cast<RunConfig&>(c));
                std::string out;
                for (std::size_t i = 0; i < list.size(); ++i) {
                    if (i) out += ',';
                    out += format_double(list[i]);
                }
                return out;
            },
            [ref, key](RunConfig& c, const std::string& s) {
                std::vector<double> list;
                std::stringstream ss(s);
                std::string item;
                while (std::getline(ss, item, ',')) list.push_back(parse_double(trim(item)));
                if (list.empty()) throw UsageError("config: empty list for " + key);
                ref(c) = list;
            }};
}

const std::vector<Section>& schema() {
    static const std::vector<Section> sections = {
        {"phantom",
         {
             f_int("width", [](RunConfig& c) -> int& { return c.phantom.width; }),
             f_int("height", [](RunConfig& c) -> int& { return c.phantom.height; }),
             f_double("spacing", [](RunConfig& c) -> double& { return c.phantom.spacing; }),
             f_double("length_min_mm", [](RunConfig& c) -> double& { return c.phantom.length_min_mm; }),
             f_double("length_max_mm", [](RunConfig& c) -> double& { return c.phantom.length_max_mm; }),
             f_double("width_min_mm", [](RunConfig& c) -> double& { return c.phantom.width_min_mm; }),
             f_double("width_max_mm", [](RunConfig& c) -> double& { return c.phantom.width_max_mm; }),
             f_double("orient_min_deg", [](RunConfig& c) -> double& { return c.phantom.orient_min_deg; }),
             f_double("orient_max_deg", [](RunConfig& c) -> double& { return c.phantom.orient_max_deg; }),
             f_double("speckle_shape", [](RunConfig& c) -> double& { return c.phantom.speckle_shape; }),
             f_double("speckle_amplitude",
                      [](RunConfig& c) -> double& { return c.phantom.speckle_amplitude; }),
             f_double("background_amplitude",
                      [](RunConfig& c) -> double& { return c.phantom.background_amplitude; }),
             f_int("distractor_min", [](RunConfig& c) -> int& { return c.phantom.distractor_min; }),
             f_int("distractor_max", [](RunConfig& c) -> int& { return c.phantom.distractor_max; }),
             f_int("placement_margin_px",
                   [](RunConfig& c) -> int& { return c.phantom.placement_margin_px; }),
         }},
        {"sweep",
         {
             f_double("length_min_mm", [](RunConfig& c) -> double& { return c.sweep.length_min_mm; }),
             f_double("length_max_mm", [](RunConfig& c) -> double& { return c.sweep.length_max_mm; }),
             f_double("width_min_mm", [](RunConfig& c) -> double& { return c.sweep.width_min_mm; }),
             f_double("width_max_mm", [](RunConfig& c) -> double& { return c.sweep.width_max_mm; }),
             f_int("stride_px", [](RunConfig& c) -> int& { return c.sweep.stride_px; }),
             f_int("size_steps", [](RunConfig& c) -> int& { return c.sweep.size_steps; }),
             f_int("patch_size", [](RunConfig& c) -> int& { return c.sweep.patch_size; }),
         }},
        {"label",
         {
             f_double("dsc_threshold", [](RunConfig& c) -> double& { return c.label.dsc_threshold; }),
             f_double("neg_per_pos", [](RunConfig& c) -> double& { return c.label.neg_per_pos; }),
         }},
        {"pretrain",
         {
             f_int("samples", [](RunConfig& c) -> int& { return c.pretrain.samples; }),
             f_int("classes", [](RunConfig& c) -> int& { return c.pretrain.classes; }),
             f_int("batch_size", [](RunConfig& c) -> int& { return c.pretrain.train.batch_size; }),
             f_double("momentum", [](RunConfig& c) -> double& { return c.pretrain.train.momentum; }),
             f_double("weight_decay",
                      [](RunConfig& c) -> double& { return c.pretrain.train.weight_decay; }),
             f_double("learning_rate",
                      [](RunConfig& c) -> double& { return c.pretrain.train.learning_rate; }),
             f_int("epochs", [](RunConfig& c) -> int& { return c.pretrain.train.epochs; }),
         }},
        {"adapt",
         {
             f_int("batch_size", [](RunConfig& c) -> int& { return c.adapt.batch_size; }),
             f_double("momentum", [](RunConfig& c) -> double& { return c.adapt.momentum; }),
             f_double("weight_decay", [](RunConfig& c) -> double& { return c.adapt.weight_decay; }),
             f_double("learning_rate", [](RunConfig& c) -> double& { return c.adapt.learning_rate; }),
             f_int("epochs", [](RunConfig& c) -> int& { return c.adapt.epochs; }),
         }},
        {"gbm",
         {
             f_double("shrinkage", [](RunConfig& c) -> double& { return c.gbm.shrinkage; }),
             f_double("sampling", [](RunConfig& c) -> double& { return c.gbm.sampling; }),
             f_int("max_depth", [](RunConfig& c) -> int& { return c.gbm.max_depth; }),
             f_int("iterations", [](RunConfig& c) -> int& { return c.gbm.iterations; }),
             f_int("min_samples_leaf", [](RunConfig& c) -> int& { return c.gbm.min_samples_leaf; }),
         }},
        {"frangi",
         {
             f_double_list("scales", [](RunConfig& c) -> std::vector<double>& { return c.frangi.scales; }),
             f_double("beta", [](RunConfig& c) -> double& { return c.frangi.beta; }),
             f_opt_double("c", [](RunConfig& c) -> std::optional<double>& { return c.frangi.c; }),
         }},
        {"pc",
         {
             f_int("scales", [](RunConfig& c) -> int& { return c.pc.scales; }),
             f_int("orientations", [](RunConfig& c) -> int& { return c.pc.orientations; }),
             f_double("min_wavelength", [](RunConfig& c) -> double& { return c.pc.min_wavelength; }),
             f_double("mult", [](RunConfig& c) -> double& { return c.pc.mult; }),
             f_double("sigma_on_f", [](RunConfig& c) -> double& { return c.pc.sigma_on_f; }),
             f_opt_double("noise_threshold",
                          [](RunConfig& c) -> std::optional<double>& { return c.pc.noise_threshold; }),
             f_double("epsilon", [](RunConfig& c) -> double& { return c.pc.epsilon; }),
             f_double("cutoff", [](RunConfig& c) -> double& { return c.pc.cutoff; }),
             f_double("gain", [](RunConfig& c) -> double& { return c.pc.gain; }),
         }},
    };
    return sections;
}

} // namespace

std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const Section& section : schema()) {
        out += "[" + section.name + "]\n";
        for (const Field& field : section.fields) out += field.key + " = " + field.get(cfg) + "\n";
        out += "\n";
    }
    return out;
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    const Section* current = nullptr;
    std::stringstream ss(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(ss, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw UsageError("config: malformed section at line " +
                                                     std::to_string(line_no));
            const std::string name = line.substr(1, line.size() - 2);
            current = nullptr;
            for (const Section& section : schema())
                if (section.name == name) current = &section;
            if (!current) throw UsageError("config: unknown section [" + name + "]");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config: expected 'key = value' at line " + std::to_string(line_no));
        if (!current) throw UsageError("config: key outside any section at line " +
                                       std::to_string(line_no));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const Field* field = nullptr;
        for (const Field& f : current->fields)
            if (f.key == key) field = &f;
        if (!field)
            throw UsageError("config: unknown key '" + key + "' in section [" + current->name + "]");
        field->set(cfg, value);
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << serialize_config(cfg);
}

void save_feature_matrix(const LabeledFeatures& data, const std::filesystem::path& path) {
    if (data.x.rows != static_cast<int>(data.labels.size()))
        throw UsageError("feature matrix: label count mismatch");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "label";
    for (int c = 0; c < data.x.cols; ++c) out << ",f" << c;
    out << '\n';
    for (int r = 0; r < data.x.rows; ++r) {
        out << data.labels[r];
        for (int c = 0; c < data.x.cols; ++c) out << ',' << format_double(data.x.at(r, c));
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

LabeledFeatures load_feature_matrix(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("feature matrix: empty file");
    int cols = 0;
    {
        std::stringstream ss(line);
        std::string field;
        if (!std::getline(ss, field, ',') || field != "label")
            throw DataError("feature matrix: bad header");
        while (std::getline(ss, field, ',')) {
            if (field != "f" + std::to_string(cols)) throw DataError("feature matrix: bad header");
            ++cols;
        }
        if (cols == 0) throw DataError("feature matrix: no feature columns");
    }
    std::vector<double> values;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        if (!std::getline(ss, field, ',')) throw DataError("feature matrix: bad row");
        labels.push_back(parse_int(field));
        int c = 0;
        while (std::getline(ss, field, ',')) {
            const double v = parse_double(field);
            if (!std::isfinite(v)) throw DataError("feature matrix: non-finite value");
            values.push_back(v);
            ++c;
        }
        if (c != cols) throw DataError("feature matrix: inconsistent column count");
    }
    if (labels.empty()) throw DataError("feature matrix: no rows");
    LabeledFeatures data;
    data.x.rows = static_cast<int>(labels.size());
    data.x.cols = cols;
    data.x.v = std::move(values);
    data.labels = std::move(labels);
    return data;
}

void write_filter_change_csv(const cnn::FilterChangeReport& report,
                             const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "layer,filter,rel_change\n";
    for (const auto& layer : report.layers)
        for (std::size_t f = 0; f < layer.per_filter.size(); ++f) {
            out << layer.name << ',' << f << ',';
            if (layer.per_filter[f]) out << format_double(*layer.per_filter[f]);
            out << '\n';
        }
    for (const auto& layer : report.layers)
        out << "# layer=" << layer.name << " over_threshold=" << layer.over_threshold
            << " undefined=" << layer.undefined << " threshold=" << format_double(report.threshold)
            << '\n';
    if (!out) throw DataError("write failed: " + path.string());
}

void write_correlations_csv(const filters::ResponsePanel& panel,
                            const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "name_a,name_b,pearson\n";
    for (const auto& corr : panel.correlations) {
        out << corr.a << ',' << corr.b << ',';
        if (corr.pearson) out << format_double(*corr.pearson);
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

} // namespace sono::config
