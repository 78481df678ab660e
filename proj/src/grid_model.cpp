#include "hdsse/grid_model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "hdsse/errors.hpp"

namespace hdsse {

std::string_view to_string(NodeRole role) {
  switch (role) {
    case NodeRole::Substation: return "substation";
    case NodeRole::PrimaryJunction: return "primary";
    case NodeRole::Transformer: return "transformer";
    case NodeRole::SecondaryJunction: return "junction";
    case NodeRole::Customer: return "customer";
  }
  return "?";
}

namespace {

std::optional<NodeRole> parse_role(std::string_view s) {
  if (s == "substation") return NodeRole::Substation;
  if (s == "primary") return NodeRole::PrimaryJunction;
  if (s == "transformer") return NodeRole::Transformer;
  if (s == "junction") return NodeRole::SecondaryJunction;
  if (s == "customer") return NodeRole::Customer;
  return std::nullopt;
}

bool is_primary_role(NodeRole role) {
  return role == NodeRole::Substation || role == NodeRole::PrimaryJunction ||
         role == NodeRole::Transformer;
}

// Union-find over node indices.
struct DisjointSets {
  explicit DisjointSets(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
  std::vector<int> parent;
};

}  // namespace

// ---------------------------------------------------------------------------
// RadialNetwork

RadialNetwork::RadialNetwork(int node_count, NodeId root, std::vector<Branch> branches)
    : node_count_(node_count), root_(root), branches_(std::move(branches)) {
  if (node_count <= 0) throw ValidationError("network has no nodes");
  if (root.value < 0 || root.value >= node_count)
    throw ValidationError(fmt::format("root node {} out of range", root.value));

  DisjointSets sets(node_count);
  std::vector<std::vector<std::pair<int, int>>> adjacency(static_cast<std::size_t>(node_count));
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const Branch& br = branches_[b];
    if (br.from.value < 0 || br.from.value >= node_count || br.to.value < 0 ||
        br.to.value >= node_count)
      throw ValidationError(fmt::format("branch {} references an unknown node", b));
    if (br.from == br.to)
      throw ValidationError(fmt::format("branch {} connects node {} to itself", b, br.from.value));
    if (!std::isfinite(br.r) || !std::isfinite(br.x) || br.r < 0.0)
      throw ValidationError(fmt::format("branch {} has invalid impedance", b));
    if (!sets.unite(br.from.value, br.to.value))
      throw ValidationError(fmt::format("branch {} closes a cycle", b));
    adjacency[br.from.index()].emplace_back(br.to.value, static_cast<int>(b));
    adjacency[br.to.index()].emplace_back(br.from.value, static_cast<int>(b));
  }

  parent_branch_.assign(static_cast<std::size_t>(node_count), -1);
  children_.assign(static_cast<std::size_t>(node_count), {});
  depth_.assign(static_cast<std::size_t>(node_count), -1);
  order_.reserve(static_cast<std::size_t>(node_count));
  order_.push_back(root);
  depth_[root.index()] = 0;
  for (std::size_t head = 0; head < order_.size(); ++head) {
    const NodeId n = order_[head];
    for (auto [other, b] : adjacency[n.index()]) {
      if (depth_[static_cast<std::size_t>(other)] >= 0) continue;
      Branch& br = branches_[static_cast<std::size_t>(b)];
      if (br.from != n) std::swap(br.from, br.to);
      parent_branch_[static_cast<std::size_t>(other)] = b;
      children_[n.index()].push_back(BranchId{b});
      depth_[static_cast<std::size_t>(other)] = depth_[n.index()] + 1;
      order_.push_back(NodeId{other});
    }
  }
  if (static_cast<int>(order_.size()) != node_count) {
    for (int n = 0; n < node_count; ++n)
      if (depth_[static_cast<std::size_t>(n)] < 0)
        throw ValidationError(fmt::format("node {} is not connected to the root", n));
  }
}

void RadialNetwork::check_node(NodeId n) const {
  if (n.value < 0 || n.value >= node_count_)
    throw std::out_of_range(fmt::format("unknown node id {}", n.value));
}

std::optional<BranchId> RadialNetwork::parent_branch(NodeId n) const {
  check_node(n);
  const auto b = parent_branch_[n.index()];
  if (b < 0) return std::nullopt;
  return BranchId{b};
}

std::span<const BranchId> RadialNetwork::child_branches(NodeId n) const {
  check_node(n);
  return children_[n.index()];
}

std::vector<BranchId> RadialNetwork::path_to_root(NodeId n) const {
  check_node(n);
  std::vector<BranchId> path;
  path.reserve(static_cast<std::size_t>(depth_[n.index()]));
  for (auto b = parent_branch_[n.index()]; b >= 0;) {
    path.push_back(BranchId{b});
    b = parent_branch_[branches_[static_cast<std::size_t>(b)].from.index()];
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<BranchId> RadialNetwork::downstream_branches(NodeId n) const {
  check_node(n);
  std::vector<BranchId> out;
  std::vector<NodeId> stack{n};
  while (!stack.empty()) {
    const NodeId cur = stack.back();
    stack.pop_back();
    for (BranchId b : children_[cur.index()]) {
      out.push_back(b);
      stack.push_back(branches_[b.index()].to);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// SecondaryCircuit

std::vector<std::size_t> SecondaryCircuit::metered_customers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < customers.size(); ++i)
    if (customers[i].has_meter) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// FeederModel

FeederModel FeederModel::build(FeederDescription description) {
  FeederModel model;

  // Nodes: dense, unique ids across all sections.
  std::map<std::int32_t, std::pair<NodeRole, int>> seen;  // id -> (role, circuit)
  for (const auto& n : description.nodes) {
    if (!seen.emplace(n.id.value, std::pair{n.role, -1}).second)
      throw ValidationError(fmt::format("node {} declared twice", n.id.value));
    if (n.role == NodeRole::Customer)
      throw ValidationError(
          fmt::format("customer node {} is outside any secondary circuit", n.id.value));
    if (!is_primary_role(n.role))
      throw ValidationError(fmt::format("node {} in [nodes] has a secondary role", n.id.value));
  }
  for (std::size_t s = 0; s < description.secondaries.size(); ++s) {
    for (const auto& n : description.secondaries[s].nodes) {
      if (!seen.emplace(n.id.value, std::pair{n.role, static_cast<int>(s)}).second)
        throw ValidationError(fmt::format("node {} declared twice", n.id.value));
      if (is_primary_role(n.role))
        throw ValidationError(fmt::format("node {} in secondary {} has a primary role",
                                          n.id.value, description.secondaries[s].id));
    }
  }
  const int node_count = static_cast<int>(seen.size());
  if (node_count == 0) throw ValidationError("model has no nodes");
  if (seen.begin()->first != 0 || seen.rbegin()->first != node_count - 1)
    throw ValidationError("node ids must be dense from 0");
  model.roles_.resize(static_cast<std::size_t>(node_count));
  model.circuit_of_.resize(static_cast<std::size_t>(node_count));
  std::optional<NodeId> root;
  for (auto& [id, rc] : seen) {
    model.roles_[static_cast<std::size_t>(id)] = rc.first;
    model.circuit_of_[static_cast<std::size_t>(id)] = rc.second;
    if (rc.first == NodeRole::Substation) {
      if (root) throw ValidationError(fmt::format("second substation node {}", id));
      root = NodeId{id};
    }
  }
  if (!root) throw ValidationError("model has no substation node");

  // Branches: dense ids across all sections.
  std::map<std::int32_t, Branch> all_branches;
  auto add_branch = [&](const BranchRecord& b) {
    if (!all_branches.emplace(b.id.value, Branch{b.from, b.to, b.r, b.x}).second)
      throw ValidationError(fmt::format("branch {} declared twice", b.id.value));
  };
  for (const auto& b : description.branches) add_branch(b);
  for (const auto& s : description.secondaries)
    for (const auto& b : s.branches) add_branch(b);
  if (!all_branches.empty() && (all_branches.begin()->first != 0 ||
                                all_branches.rbegin()->first != static_cast<int>(all_branches.size()) - 1))
    throw ValidationError("branch ids must be dense from 0");
  std::vector<Branch> joint;
  joint.reserve(all_branches.size());
  for (auto& [id, b] : all_branches) joint.push_back(b);
  model.network_ = RadialNetwork(node_count, *root, std::move(joint));

  // Primary view.
  PrimaryView& pv = model.primary_;
  pv.local_of_node.assign(static_cast<std::size_t>(node_count), -1);
  for (int n = 0; n < node_count; ++n) {
    if (is_primary_role(model.roles_[static_cast<std::size_t>(n)])) {
      pv.local_of_node[static_cast<std::size_t>(n)] = static_cast<std::int32_t>(pv.nodes.size());
      pv.nodes.push_back(NodeId{n});
    }
  }
  std::vector<Branch> primary_branches;
  for (const auto& b : description.branches) {
    const auto lf = pv.local_of_node.at(b.from.index());
    const auto lt = pv.local_of_node.at(b.to.index());
    if (lf < 0 || lt < 0)
      throw ValidationError(
          fmt::format("primary branch {} touches a secondary node", b.id.value));
    pv.branches.push_back(b.id);
    primary_branches.push_back(Branch{NodeId{lf}, NodeId{lt}, b.r, b.x});
  }
  pv.network = RadialNetwork(static_cast<int>(pv.nodes.size()),
                             NodeId{pv.local_of_node[root->index()]}, std::move(primary_branches));

  // Transformers and secondaries.
  std::map<int, std::size_t> secondary_index;
  for (std::size_t s = 0; s < description.secondaries.size(); ++s)
    if (!secondary_index.emplace(description.secondaries[s].id, s).second)
      throw ValidationError(
          fmt::format("secondary {} declared twice", description.secondaries[s].id));
  std::vector<std::optional<NodeId>> transformer_of(description.secondaries.size());
  std::set<std::int32_t> transformer_nodes;
  for (const auto& t : description.transformers) {
    if (t.primary_node.value < 0 || t.primary_node.value >= node_count ||
        model.roles_[t.primary_node.index()] != NodeRole::Transformer)
      throw ValidationError(
          fmt::format("transformer record names node {} which is not a transformer node",
                      t.primary_node.value));
    auto it = secondary_index.find(t.secondary_id);
    if (it == secondary_index.end())
      throw ValidationError(fmt::format("transformer at node {} references unknown secondary {}",
                                        t.primary_node.value, t.secondary_id));
    if (transformer_of[it->second])
      throw ValidationError(fmt::format("secondary {} has two transformers", t.secondary_id));
    if (!transformer_nodes.insert(t.primary_node.value).second)
      throw ValidationError(
          fmt::format("transformer node {} feeds two secondaries", t.primary_node.value));
    transformer_of[it->second] = t.primary_node;
  }
  for (int n = 0; n < node_count; ++n)
    if (model.roles_[static_cast<std::size_t>(n)] == NodeRole::Transformer &&
        !transformer_nodes.contains(n))
      throw ValidationError(fmt::format("transformer node {} has no secondary circuit", n));

  for (std::size_t s = 0; s < description.secondaries.size(); ++s) {
    const SecondaryRecord& rec = description.secondaries[s];
    if (!transformer_of[s])
      throw ValidationError(fmt::format("secondary {} has no transformer record", rec.id));
    SecondaryCircuit sc;
    sc.id = rec.id;
    sc.transformer_node = *transformer_of[s];
    std::map<std::int32_t, std::int32_t> local;
    local[sc.transformer_node.value] = 0;
    sc.nodes.push_back(sc.transformer_node);
    for (const auto& n : rec.nodes) {
      local[n.id.value] = static_cast<std::int32_t>(sc.nodes.size());
      sc.nodes.push_back(n.id);
    }
    std::vector<Branch> local_branches;
    for (const auto& b : rec.branches) {
      auto f = local.find(b.from.value);
      auto t = local.find(b.to.value);
      if (f == local.end() || t == local.end())
        throw ValidationError(
            fmt::format("branch {} leaves secondary {}", b.id.value, rec.id));
      sc.branches.push_back(b.id);
      local_branches.push_back(Branch{NodeId{f->second}, NodeId{t->second}, b.r, b.x});
    }
    sc.network = RadialNetwork(static_cast<int>(sc.nodes.size()), NodeId{0},
                               std::move(local_branches));
    std::set<std::int32_t> customer_nodes;
    for (const auto& c : rec.customers) {
      auto it = local.find(c.node.value);
      if (it == local.end() || it->second == 0 ||
          model.roles_[c.node.index()] != NodeRole::Customer)
        throw ValidationError(fmt::format("customer {} is not a customer node of secondary {}",
                                          c.node.value, rec.id));
      if (!customer_nodes.insert(c.node.value).second)
        throw ValidationError(fmt::format("customer {} listed twice", c.node.value));
      sc.customers.push_back(c);
      sc.customer_local.push_back(NodeId{it->second});
    }
    for (const auto& n : rec.nodes)
      if (n.role == NodeRole::Customer && !customer_nodes.contains(n.id.value))
        throw ValidationError(fmt::format("customer node {} has no customer record", n.id.value));
    if (sc.customers.empty())
      throw ValidationError(fmt::format("secondary {} has no customers", rec.id));
    model.secondaries_.push_back(std::move(sc));
  }
  for (const auto& sc : model.secondaries_)
    pv.transformer_local.push_back(NodeId{pv.local_of_node[sc.transformer_node.index()]});

  model.description_ = std::move(description);
  return model;
}

int FeederModel::customer_count() const {
  int total = 0;
  for (const auto& s : secondaries_) total += static_cast<int>(s.customers.size());
  return total;
}

std::vector<BranchId> path_to_root(const FeederModel& model, NodeId n) {
  return model.network().path_to_root(n);
}

std::vector<BranchId> downstream_branches(const FeederModel& model, NodeId n) {
  return model.network().downstream_branches(n);
}

FeederModel with_metering(const FeederModel& model, std::span<const NodeId> metered) {
  FeederDescription d = model.description();
  std::set<NodeId> set(metered.begin(), metered.end());
  for (auto& s : d.secondaries)
    for (auto& c : s.customers) c.has_meter = set.contains(c.node);
  return FeederModel::build(std::move(d));
}

// ---------------------------------------------------------------------------
// Text format

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, int line, const char* what) {
  T value{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw ParseError(fmt::format("bad {} '{}'", what, s), line);
  return value;
}

NodeRecord parse_node(std::span<const std::string_view> f, int line) {
  if (f.size() != 3) throw ParseError("node record needs: id role phase", line);
  auto role = parse_role(f[1]);
  if (!role) throw ParseError(fmt::format("unknown role '{}'", f[1]), line);
  return {NodeId{parse_number<std::int32_t>(f[0], line, "node id")}, *role, std::string(f[2])};
}

BranchRecord parse_branch(std::span<const std::string_view> f, int line) {
  if (f.size() != 5) throw ParseError("branch record needs: id from to r_pu x_pu", line);
  return {BranchId{parse_number<std::int32_t>(f[0], line, "branch id")},
          NodeId{parse_number<std::int32_t>(f[1], line, "node id")},
          NodeId{parse_number<std::int32_t>(f[2], line, "node id")},
          parse_number<double>(f[3], line, "resistance"),
          parse_number<double>(f[4], line, "reactance")};
}

bool parse_flag(std::string_view field, std::string_view key, int line) {
  if (field.size() != key.size() + 2 || field.substr(0, key.size()) != key ||
      field[key.size()] != '=' || (field.back() != '0' && field.back() != '1'))
    throw ParseError(fmt::format("expected {}=0|1, got '{}'", key, field), line);
  return field.back() == '1';
}

double parse_keyed(std::string_view field, std::string_view key, int line) {
  if (field.size() <= key.size() + 1 || field.substr(0, key.size()) != key || field[key.size()] != '=')
    throw ParseError(fmt::format("expected {}=<value>, got '{}'", key, field), line);
  return parse_number<double>(field.substr(key.size() + 1), line, key == "p" ? "nominal p" : "nominal q");
}

}  // namespace

FeederDescription parse_feeder(std::string_view text) {
  FeederDescription d;
  enum class Section { None, Base, Nodes, Branches, Transformers, Secondary } section = Section::None;
  SecondaryRecord* current = nullptr;
  std::set<std::string> base_keys;

  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto fields = split_ws(line);
    if (fields.empty()) {
      if (eol == text.size()) break;
      continue;
    }

    if (fields[0].front() == '[') {
      std::string header;
      for (auto f : fields) header += std::string(f) + " ";
      header.pop_back();
      if (header.back() != ']') throw ParseError("unterminated section header", line_no);
      header = header.substr(1, header.size() - 2);
      if (header == "base") section = Section::Base;
      else if (header == "nodes") section = Section::Nodes;
      else if (header == "branches") section = Section::Branches;
      else if (header == "transformers") section = Section::Transformers;
      else if (header.rfind("secondary ", 0) == 0) {
        section = Section::Secondary;
        d.secondaries.push_back({});
        current = &d.secondaries.back();
        current->id = parse_number<int>(std::string_view(header).substr(10), line_no, "secondary id");
      } else {
        throw ParseError(fmt::format("unknown section [{}]", header), line_no);
      }
      continue;
    }

    switch (section) {
      case Section::None: throw ParseError("record outside any section", line_no);
      case Section::Base: {
        if (fields.size() != 3 || fields[1] != "=")
          throw ParseError("base record needs: key = value", line_no);
        const double v = parse_number<double>(fields[2], line_no, "base value");
        if (v <= 0) throw ParseError("base values must be positive", line_no);
        if (fields[0] == "s_base_va") d.base.s_base_va = v;
        else if (fields[0] == "v_base_primary_v") d.base.v_base_primary_v = v;
        else if (fields[0] == "v_base_secondary_v") d.base.v_base_secondary_v = v;
        else throw ParseError(fmt::format("unknown base key '{}'", fields[0]), line_no);
        base_keys.insert(std::string(fields[0]));
        break;
      }
      case Section::Nodes: d.nodes.push_back(parse_node(fields, line_no)); break;
      case Section::Branches: d.branches.push_back(parse_branch(fields, line_no)); break;
      case Section::Transformers:
        if (fields.size() != 2) throw ParseError("transformer record needs: node secondary", line_no);
        d.transformers.push_back({NodeId{parse_number<std::int32_t>(fields[0], line_no, "node id")},
                                  parse_number<int>(fields[1], line_no, "secondary id")});
        break;
      case Section::Secondary: {
        const auto rest = std::span(fields).subspan(1);
        if (fields[0] == "node") current->nodes.push_back(parse_node(rest, line_no));
        else if (fields[0] == "branch") current->branches.push_back(parse_branch(rest, line_no));
        else if (fields[0] == "customer") {
          if (rest.size() != 3 && rest.size() != 5)
            throw ParseError("customer record needs: node meter=0|1 pv=0|1 [p=<pu> q=<pu>]", line_no);
          CustomerRecord c{NodeId{parse_number<std::int32_t>(rest[0], line_no, "node id")},
                           parse_flag(rest[1], "meter", line_no), parse_flag(rest[2], "pv", line_no)};
          if (rest.size() == 5) {
            c.nominal_p = parse_keyed(rest[3], "p", line_no);
            c.nominal_q = parse_keyed(rest[4], "q", line_no);
          }
          current->customers.push_back(c);
        } else {
          throw ParseError(fmt::format("unknown secondary record '{}'", fields[0]), line_no);
        }
        break;
      }
    }
  }
  if (base_keys.size() != 3) throw ParseError("[base] must define all three base values", 0);
  return d;
}

FeederModel load_feeder(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()), 0);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return FeederModel::build(parse_feeder(buffer.str()));
}

std::string format_feeder(const FeederDescription& d) {
  std::string out;
  auto branch_line = [](const BranchRecord& b) {
    return fmt::format("{} {} {} {} {}", b.id.value, b.from.value, b.to.value, b.r, b.x);
  };
  out += "[base]\n";
  out += fmt::format("s_base_va = {}\nv_base_primary_v = {}\nv_base_secondary_v = {}\n\n",
                     d.base.s_base_va, d.base.v_base_primary_v, d.base.v_base_secondary_v);
  out += "[nodes]\n# id role phase\n";
  for (const auto& n : d.nodes) out += fmt::format("{} {} {}\n", n.id.value, to_string(n.role), n.phase);
  out += "\n[branches]\n# id from to r_pu x_pu\n";
  for (const auto& b : d.branches) out += branch_line(b) + "\n";
  out += "\n[transformers]\n# primary_node secondary_id\n";
  for (const auto& t : d.transformers) out += fmt::format("{} {}\n", t.primary_node.value, t.secondary_id);
  for (const auto& s : d.secondaries) {
    out += fmt::format("\n[secondary {}]\n", s.id);
    for (const auto& n : s.nodes)
      out += fmt::format("node {} {} {}\n", n.id.value, to_string(n.role), n.phase);
    for (const auto& b : s.branches) out += "branch " + branch_line(b) + "\n";
    for (const auto& c : s.customers)
      out += fmt::format("customer {} meter={} pv={} p={} q={}\n", c.node.value, c.has_meter ? 1 : 0,
                         c.has_pv ? 1 : 0, c.nominal_p, c.nominal_q);
  }
  return out;
}

void save_feeder(const FeederModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << "# radial feeder model (per-unit)\n" << format_feeder(model.description());
}

}  // namespace hdsse
