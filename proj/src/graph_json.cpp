// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/graph_json.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

namespace nnc {

namespace {

using Json = nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw GraphError(path + ": " + message);
}

void only_fields(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) fail(path + "." + key, "unknown field");
  }
}

const Json& field(const Json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(path + "." + key, "missing field");
  return *it;
}

std::string string_at(const Json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

std::size_t count_at(const Json& j, const std::string& path) {
  if (!j.is_number_unsigned()) fail(path, "expected a nonnegative integer");
  return j.get<std::size_t>();
}

double number_at(const Json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

const Json& array_at(const Json& j, const std::string& path, std::optional<std::size_t> size = {}) {
  if (!j.is_array()) fail(path, "expected an array");
  if (size && j.size() != *size) fail(path, "expected " + std::to_string(*size) + " elements");
  return j;
}

std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

SparsityPattern parse_pattern(const Json& j, const std::string& path) {
  only_fields(j, path, {"blocks", "coords"});
  if (j.contains("blocks") == j.contains("coords")) fail(path, "expected exactly one of blocks, coords");
  if (j.contains("blocks")) {
    const std::string p = path + ".blocks";
    std::vector<Block> blocks;
    const Json& arr = array_at(j["blocks"], p);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string bp = index(p, i);
      const Json& q = array_at(arr[i], bp, 4);
      blocks.push_back({count_at(q[0], bp), count_at(q[1], bp), count_at(q[2], bp), count_at(q[3], bp)});
    }
    return SparsityPattern::block_list(std::move(blocks));
  }
  const std::string p = path + ".coords";
  std::vector<Coord> coords;
  const Json& arr = array_at(j["coords"], p);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string cp = index(p, i);
    const Json& q = array_at(arr[i], cp, 2);
    coords.push_back({count_at(q[0], cp), count_at(q[1], cp)});
  }
  return SparsityPattern::coords(std::move(coords));
}

Matrix parse_init(const Json& j, Shape shape, const std::string& path) {
  array_at(j, path, shape.rows);
  Matrix m(shape);
  for (std::size_t r = 0; r < shape.rows; ++r) {
    const std::string rp = index(path, r);
    const Json& row = array_at(j[r], rp, shape.cols);
    for (std::size_t c = 0; c < shape.cols; ++c) m(r, c) = number_at(row[c], index(rp, c));
  }
  return m;
}

/// Runs a builder call, prefixing its GraphError with the document path.
template <typename Fn>
auto at_path(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const GraphError& e) {
    fail(path, e.what());
  }
}

}  // namespace

GraphDocument parse_graph_json(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw GraphError(std::string("malformed JSON: ") + e.what());
  }
  only_fields(doc, "graph", {"version", "vars", "nodes", "updates", "outputs", "convergence"});
  const auto version = count_at(field(doc, "version", "graph"), "graph.version");
  if (version != 1) fail("graph.version", "unsupported version " + std::to_string(version));

  GraphDocument out;
  GraphBuilder b;
  const Json& vars = array_at(field(doc, "vars", "graph"), "vars");
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const std::string p = index("vars", i);
    const Json& v = vars[i];
    only_fields(v, p, {"id", "kind", "shape", "role", "pattern", "init"});
    const std::string id = string_at(field(v, "id", p), p + ".id");
    const std::string kind_name = string_at(field(v, "kind", p), p + ".kind");
    const auto kind = parse_var_kind(kind_name);
    if (!kind) fail(p + ".kind", "unknown var kind '" + kind_name + "'");
    const Json& sj = array_at(field(v, "shape", p), p + ".shape", 2);
    const Shape shape{count_at(sj[0], p + ".shape"), count_at(sj[1], p + ".shape")};
    const std::string role_name = string_at(field(v, "role", p), p + ".role");
    const auto role = parse_role(role_name);
    if (!role) fail(p + ".role", "unknown role '" + role_name + "'");
    SparsityPattern pattern;
    if (v.contains("pattern")) pattern = at_path(p + ".pattern", [&] { return parse_pattern(v["pattern"], p + ".pattern"); });
    at_path(p, [&] { b.declare_var(id, *kind, shape, *role, pattern); return 0; });
    if (v.contains("init")) {
      if (*role == Role::Derived) fail(p + ".init", "derived values cannot be initialized");
      out.init[id] = parse_init(v["init"], shape, p + ".init");
    }
  }

  const Json& nodes = array_at(field(doc, "nodes", "graph"), "nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string p = index("nodes", i);
    const Json& n = nodes[i];
    only_fields(n, p, {"id", "kind", "inputs", "theta", "pattern_of"});
    const std::string id = string_at(field(n, "id", p), p + ".id");
    const std::string kind_name = string_at(field(n, "kind", p), p + ".kind");
    const auto kind = parse_op_kind(kind_name);
    if (!kind) fail(p + ".kind", "unknown op kind '" + kind_name + "'");
    if (is_fused(*kind)) fail(p + ".kind", "fused kind '" + kind_name + "' is produced by passes only");
    std::vector<std::string> inputs;
    const Json& ins = array_at(field(n, "inputs", p), p + ".inputs");
    for (std::size_t k = 0; k < ins.size(); ++k) inputs.push_back(string_at(ins[k], index(p + ".inputs", k)));
    NodeAttrs attrs;
    if (n.contains("theta")) attrs.theta = number_at(n["theta"], p + ".theta");
    if (n.contains("pattern_of")) attrs.pattern_of = string_at(n["pattern_of"], p + ".pattern_of");
    at_path(p, [&] { b.add_node(*kind, std::move(inputs), std::move(attrs), id); return 0; });
  }

  const Json& updates = field(doc, "updates", "graph");
  if (!updates.is_object()) fail("updates", "expected an object");
  for (const auto& [state, node] : updates.items()) {
    const std::string p = "updates." + state;
    const std::string producer = string_at(node, p);
    at_path(p, [&] { b.bind_update(state, producer); return 0; });
  }

  const Json& outputs = array_at(field(doc, "outputs", "graph"), "outputs");
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const std::string p = index("outputs", i);
    const std::string id = string_at(outputs[i], p);
    at_path(p, [&] { b.add_output(id); return 0; });
  }

  const Json& conv = field(doc, "convergence", "graph");
  only_fields(conv, "convergence", {"cost", "tol", "max_iters"});
  const std::string cost = string_at(field(conv, "cost", "convergence"), "convergence.cost");
  const double tol = number_at(field(conv, "tol", "convergence"), "convergence.tol");
  const std::size_t max_iters = count_at(field(conv, "max_iters", "convergence"), "convergence.max_iters");
  at_path("convergence", [&] { b.until_converged(cost, tol, max_iters); return 0; });

  out.graph = at_path("graph", [&] { return std::move(b).finish(); });
  return out;
}

GraphDocument load_graph_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GraphError("cannot read graph file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_graph_json(text.str());
}

std::string graph_to_json(const ExecutionGraph& g, const ValueMap& init) {
  Json vars = Json::array();
  for (const VarDecl& v : g.vars) {
    Json j = {{"id", v.id},
              {"kind", std::string(to_string(v.kind))},
              {"shape", {v.shape.rows, v.shape.cols}},
              {"role", std::string(to_string(v.role))}};
    if (v.pattern.is_block_list()) {
      Json blocks = Json::array();
      for (const Block& b : v.pattern.blocks()) blocks.push_back({b.row0, b.col0, b.rows, b.cols});
      j["pattern"] = {{"blocks", blocks}};
    } else if (v.pattern.is_coord()) {
      Json coords = Json::array();
      for (const Coord& c : v.pattern.coord_list()) coords.push_back({c.row, c.col});
      j["pattern"] = {{"coords", coords}};
    }
    if (auto it = init.find(v.id); it != init.end()) {
      Json rows = Json::array();
      for (std::size_t r = 0; r < it->second.rows(); ++r) {
        Json row = Json::array();
        for (std::size_t c = 0; c < it->second.cols(); ++c) row.push_back(it->second(r, c));
        rows.push_back(std::move(row));
      }
      j["init"] = std::move(rows);
    }
    vars.push_back(std::move(j));
  }
  Json nodes = Json::array();
  for (const OpNode& n : g.nodes) {
    if (is_fused(n.kind)) throw GraphError(n.id + ": fused kinds are not serializable");
    if (n.preamble) throw GraphError(n.id + ": preamble marks are not serializable");
    Json j = {{"id", n.id}, {"kind", std::string(to_string(n.kind))}, {"inputs", n.inputs}};
    if (n.kind == OpKind::SoftShrink) j["theta"] = n.attrs.theta;
    if (n.kind == OpKind::MaskedMatMul) j["pattern_of"] = n.attrs.pattern_of;
    nodes.push_back(std::move(j));
  }
  Json doc = {{"version", 1}, {"vars", vars}, {"nodes", nodes}, {"updates", g.updates}, {"outputs", g.outputs}};
  if (!g.convergence) throw GraphError("graph has no convergence loop");
  doc["convergence"] = {{"cost", g.convergence->cost},
                        {"tol", g.convergence->tol},
                        {"max_iters", g.convergence->max_iters}};
  return doc.dump(2) + "\n";
}

}  // namespace nnc
