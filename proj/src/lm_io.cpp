#include <cmath>
#include <set>

#include "gdc/error.hpp"
#include "gdc/lm.hpp"
#include "json.hpp"

namespace gdc {

namespace {

using nlohmann::json;

constexpr std::string_view kModelFormat = "gdc.tabular_ar_model";

json encode_logit(double v) {
  if (std::isinf(v) && v < 0) return "-inf";
  return v;
}

double decode_logit(const json& v) {
  if (v.is_string() && v.get<std::string>() == "-inf") return kNegInf;
  if (!v.is_number()) throw Error(ErrorKind::SchemaMismatch, "logit must be a number or \"-inf\"");
  return v.get<double>();
}

void expect_fields(const json& obj, const std::set<std::string>& fields, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::SchemaMismatch, where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!fields.count(key)) throw Error(ErrorKind::SchemaMismatch, "unexpected field '" + key + "' in " + where);
  }
  for (const auto& f : fields) {
    if (!obj.contains(f)) throw Error(ErrorKind::SchemaMismatch, "missing field '" + f + "' in " + where);
  }
}

}  // namespace

std::string serialize_model(const TabularARModel& model) {
  json doc;
  doc["format"] = kModelFormat;
  doc["version"] = kModelFormatVersion;
  doc["order"] = model.order();
  doc["lmax"] = model.space().lmax();
  doc["vocabulary"] = model.vocabulary().tokens();
  doc["eos_index"] = model.vocabulary().eos();
  doc["trainable"] = model.trainable();
  json contexts = json::array();
  for (std::size_t row = 0; row < model.context_count(); ++row) {
    json logits = json::array();
    for (const double v : model.logits(row)) logits.push_back(encode_logit(v));
    contexts.push_back({{"context", model.context(row)}, {"logits", std::move(logits)}});
  }
  doc["contexts"] = std::move(contexts);
  return doc.dump(1);
}

TabularARModel deserialize_model(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::SchemaMismatch, std::string("model document is not JSON: ") + e.what());
  }
  expect_fields(doc, {"format", "version", "order", "lmax", "vocabulary", "eos_index", "trainable", "contexts"},
                "model document");
  try {
    if (doc["format"].get<std::string>() != kModelFormat) {
      throw Error(ErrorKind::SchemaMismatch, "format is not " + std::string(kModelFormat));
    }
    const int version = doc["version"].get<int>();
    if (version != kModelFormatVersion) {
      throw Error(ErrorKind::SchemaMismatch, "model version " + std::to_string(version) + " but reader expects " +
                                                 std::to_string(kModelFormatVersion));
    }
    Vocabulary vocab(doc["vocabulary"].get<std::vector<std::string>>(), doc["eos_index"].get<std::size_t>());
    SequenceSpace space(std::move(vocab), doc["lmax"].get<std::size_t>());
    TabularARModel model(std::move(space), doc["order"].get<int>());
    const auto& contexts = doc["contexts"];
    if (!contexts.is_array() || contexts.size() != model.context_count()) {
      throw Error(ErrorKind::SchemaMismatch, "expected " + std::to_string(model.context_count()) + " contexts");
    }
    std::vector<bool> filled(model.context_count(), false);
    std::vector<double> row_logits(model.width());
    for (const auto& entry : contexts) {
      expect_fields(entry, {"context", "logits"}, "context entry");
      const auto ctx = entry["context"].get<std::vector<TokenId>>();
      const auto row = model.row_of(ctx);
      const auto& logits = entry["logits"];
      if (!logits.is_array() || logits.size() != model.width()) {
        throw Error(ErrorKind::SchemaMismatch, "logit vector must cover the vocabulary");
      }
      for (std::size_t j = 0; j < model.width(); ++j) row_logits[j] = decode_logit(logits[j]);
      if (filled[row]) throw Error(ErrorKind::SchemaMismatch, "duplicate context");
      filled[row] = true;
      model.set_logits(row, row_logits);
    }
    model.set_trainable(doc["trainable"].get<bool>());
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, std::string("malformed model document: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::SchemaMismatch) throw;
    throw Error(ErrorKind::SchemaMismatch, e.what());
  }
}

}  // namespace gdc
