#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adaperceiver/model.hpp"

namespace adaperceiver {

// Model checkpoint container (single file):
//   bytes 0..3   magic "ADPC"
//   bytes 4..7   format version (u32 LE)
//   bytes 8..15  JSON header length (u64 LE)
//   header       UTF-8 JSON: {"config": {...}, "dtype": "f32"|"f64",
//                "extra": {string: string},
//                "tensors": [{"name","shape","offset","count"}]}
//   payload      raw little-endian scalars, in header order
// Offsets are scalar counts into the payload. The header is self-describing:
// a checkpoint can be inspected without the library.
template <typename S>
void save_checkpoint(const std::string& path, const AdaPerceiverT<S>& model,
                     const std::map<std::string, std::string>& extra = {});

template <typename S>
std::unique_ptr<AdaPerceiverT<S>> load_checkpoint(const std::string& path,
                                                  std::map<std::string, std::string>* extra = nullptr);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json_text(const std::string& text);

// RFC 4180 CSV writer: fields containing comma, quote or newline are quoted,
// quotes doubled, rows end with '\n'. Doubles are written with %.17g so they
// parse back to the identical value.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns);
  ~CsvWriter();
  void row(const std::vector<std::string>& fields);
  void flush();
  static std::string field(double v);
  static std::string field(int64_t v);
  static std::string escape(const std::string& raw);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  size_t columns_ = 0;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  int column_index(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);

extern template void save_checkpoint<float>(const std::string&, const AdaPerceiverT<float>&,
                                            const std::map<std::string, std::string>&);
extern template void save_checkpoint<double>(const std::string&, const AdaPerceiverT<double>&,
                                             const std::map<std::string, std::string>&);
extern template std::unique_ptr<AdaPerceiverT<float>> load_checkpoint<float>(
    const std::string&, std::map<std::string, std::string>*);
extern template std::unique_ptr<AdaPerceiverT<double>> load_checkpoint<double>(
    const std::string&, std::map<std::string, std::string>*);

}  // namespace adaperceiver
