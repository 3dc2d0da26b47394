#include "adaperceiver/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace adaperceiver {

using nlohmann::json;

namespace {

json config_json(const ModelConfig& c) {
  return json{{"image_size", c.image_size},
              {"patch_size", c.patch_size},
              {"in_channels", c.in_channels},
              {"classes", c.classes},
              {"d", c.d},
              {"heads", c.heads},
              {"depth", c.depth},
              {"max_latents", c.max_latents},
              {"ffn_ratio", c.ffn_ratio},
              {"rope_theta", c.rope_theta},
              {"layer_scale_init", c.layer_scale_init},
              {"norm_eps", c.norm_eps},
              {"embed_ffn", c.embed_ffn},
              {"token_grans", c.token_grans},
              {"widths", c.widths},
              {"depths", c.depths}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.classes = j.at("classes").get<int>();
  c.d = j.at("d").get<int>();
  c.heads = j.at("heads").get<int>();
  c.depth = j.at("depth").get<int>();
  c.max_latents = j.at("max_latents").get<int>();
  c.ffn_ratio = j.at("ffn_ratio").get<double>();
  c.rope_theta = j.at("rope_theta").get<double>();
  c.layer_scale_init = j.at("layer_scale_init").get<double>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.embed_ffn = j.at("embed_ffn").get<bool>();
  c.token_grans = j.at("token_grans").get<std::vector<int>>();
  c.widths = j.at("widths").get<std::vector<int>>();
  c.depths = j.at("depths").get<std::vector<int>>();
  c.validate();
  return c;
}

constexpr char kMagic[4] = {'A', 'D', 'P', 'C'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_le(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename S>
const char* dtype_name() {
  return sizeof(S) == 4 ? "f32" : "f64";
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(2); }

ModelConfig model_config_from_json_text(const std::string& text) {
  return config_from(json::parse(text));
}

template <typename S>
void save_checkpoint(const std::string& path, const AdaPerceiverT<S>& model,
                     const std::map<std::string, std::string>& extra) {
  const auto params = model.named_parameters();
  json tensors = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    tensors.push_back(json{{"name", name},
                           {"shape", t->shape()},
                           {"offset", offset},
                           {"count", static_cast<uint64_t>(t->numel())}});
    offset += static_cast<uint64_t>(t->numel());
  }
  json header{{"config", config_json(model.config())},
              {"dtype", dtype_name<S>()},
              {"extra", extra},
              {"tensors", tensors}};
  const std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(kMagic, 4);
  write_le<uint32_t>(f, kVersion);
  write_le<uint64_t>(f, htext.size());
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [name, t] : params) {
    f.write(reinterpret_cast<const char*>(t->value().data()),
            static_cast<std::streamsize>(t->value().size() * sizeof(S)));
  }
  if (!f) throw IoError("short write to " + path);
}

template <typename S>
std::unique_ptr<AdaPerceiverT<S>> load_checkpoint(const std::string& path,
                                                  std::map<std::string, std::string>* extra) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw BadMagicNumber("not an AdaPerceiver checkpoint: " + path);
  }
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion) throw IoError("unsupported checkpoint version");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw IoError("truncated header in " + path);
  const json header = json::parse(htext);

  if (header.at("dtype").get<std::string>() != dtype_name<S>()) {
    throw IoError("checkpoint dtype " + header.at("dtype").get<std::string>() +
                  " does not match the requested scalar type");
  }
  auto cfg = config_from(header.at("config"));
  auto model = std::make_unique<AdaPerceiverT<S>>(cfg, /*seed=*/0);

  std::map<std::string, std::pair<uint64_t, uint64_t>> directory;
  for (const auto& t : header.at("tensors")) {
    directory[t.at("name").get<std::string>()] = {t.at("offset").get<uint64_t>(),
                                                  t.at("count").get<uint64_t>()};
  }
  const std::streampos payload_start = f.tellg();
  for (auto& [name, tensor] : model->named_parameters()) {
    auto it = directory.find(name);
    if (it == directory.end()) throw CountMismatch("checkpoint missing tensor " + name);
    const auto [offset, count] = it->second;
    if (static_cast<Index>(count) != tensor->numel()) {
      throw CountMismatch("tensor " + name + " has " + std::to_string(count) +
                          " scalars, model expects " + std::to_string(tensor->numel()));
    }
    f.seekg(payload_start + static_cast<std::streamoff>(offset * sizeof(S)));
    f.read(reinterpret_cast<char*>(tensor->mutable_value().data()),
           static_cast<std::streamsize>(count * sizeof(S)));
    if (!f) throw IoError("truncated payload in " + path);
  }
  if (extra != nullptr) {
    extra->clear();
    for (const auto& [k, v] : header.at("extra").items()) {
      (*extra)[k] = v.template get<std::string>();
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvWriter::Impl {
  std::ofstream file;
  std::string path;
};

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& columns)
    : impl_(new Impl), columns_(columns.size()) {
  impl_->path = path;
  impl_->file.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->file) throw IoError("cannot write " + path);
  row(columns);
}

CsvWriter::~CsvWriter() = default;

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != columns_) {
    throw ShapeMismatch("csv row has " + std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(columns_));
  }
  std::string line;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += escape(fields[i]);
  }
  line += '\n';
  impl_->file.write(line.data(), static_cast<std::streamsize>(line.size()));
  if (!impl_->file) throw IoError("short write to " + impl_->path);
}

void CsvWriter::flush() { impl_->file.flush(); }

std::string CsvWriter::field(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string CsvWriter::field(int64_t v) { return std::to_string(v); }

std::string CsvWriter::escape(const std::string& raw) {
  const bool needs_quote = raw.find_first_of(",\"\n\r") != std::string::npos;
  if (!needs_quote) return raw;
  std::string out = "\"";
  for (char c : raw) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

int CsvTable::column_index(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  throw IoError("csv column not found: " + name);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  CsvTable table;
  std::vector<std::string> fields;
  std::string cur;
  bool in_quotes = false;
  auto end_field = [&]() {
    fields.push_back(cur);
    cur.clear();
  };
  auto end_row = [&]() {
    end_field();
    if (table.columns.empty()) table.columns = fields;
    else table.rows.push_back(fields);
    fields.clear();
  };
  for (size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (!cur.empty() || !fields.empty()) end_row();
  return table;
}

template void save_checkpoint<float>(const std::string&, const AdaPerceiverT<float>&,
                                     const std::map<std::string, std::string>&);
template void save_checkpoint<double>(const std::string&, const AdaPerceiverT<double>&,
                                      const std::map<std::string, std::string>&);
template std::unique_ptr<AdaPerceiverT<float>> load_checkpoint<float>(
    const std::string&, std::map<std::string, std::string>*);
template std::unique_ptr<AdaPerceiverT<double>> load_checkpoint<double>(
    const std::string&, std::map<std::string, std::string>*);

}  // namespace adaperceiver
