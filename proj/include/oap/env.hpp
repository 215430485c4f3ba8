#pragma once

// Desk-scale environments: an exact grid maze (with its tabular MDP) and a
// deterministic 2-D point mass. Both expose privileged model access for the
// oracles and the theory checks.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "oap/errors.hpp"
#include "oap/io.hpp"
#include "oap/rng.hpp"

namespace oap {

struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Eigen::MatrixXd> transition;  // per action: row s is T(.|s,a)
  Eigen::MatrixXd reward;                   // n_states x n_actions
  Eigen::VectorXd initial;
  double gamma = 0.99;

  void validate() const {
    if (n_states <= 0 || n_actions <= 0) throw ConfigError("MDP needs at least one state and one action");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
    if (static_cast<int>(transition.size()) != n_actions) throw ConfigError("one transition matrix per action");
    for (const auto& t : transition) {
      if (t.rows() != n_states || t.cols() != n_states) throw ConfigError("transition matrix shape");
      if ((t.array() < 0.0).any()) throw ConfigError("negative transition probability");
      for (int s = 0; s < n_states; ++s)
        if (std::abs(t.row(s).sum() - 1.0) > 1e-12) throw ConfigError("transition row does not sum to 1");
    }
    if (reward.rows() != n_states || reward.cols() != n_actions) throw ConfigError("reward matrix shape");
    if (initial.size() != n_states || (initial.array() < 0.0).any() || std::abs(initial.sum() - 1.0) > 1e-12)
      throw ConfigError("initial distribution must be a probability vector");
  }
};

// ---------------------------------------------------------------------------
// Grid maze

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

inline constexpr int kMoveCount = 4;
// Up, Right, Down, Left. Rows grow downward.
inline constexpr std::array<Cell, kMoveCount> kMoveDelta{{{0, -1}, {1, 0}, {0, 1}, {-1, 0}}};

struct GridMaze {
  int width = 0;
  int height = 0;
  std::vector<char> walls;  // row-major, 1 = wall
  Cell start;
  Cell goal;
  double step_reward = -1.0;
  double goal_reward = 0.0;

  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  bool is_wall(Cell c) const { return walls[static_cast<std::size_t>(c.y * width + c.x)] != 0; }
  bool is_free(Cell c) const { return in_bounds(c) && !is_wall(c); }

  // Blocked moves leave the agent in place.
  Cell move(Cell c, int m) const {
    Cell n{c.x + kMoveDelta[static_cast<std::size_t>(m)].x, c.y + kMoveDelta[static_cast<std::size_t>(m)].y};
    return is_free(n) ? n : c;
  }

  void validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("maze dimensions must be positive");
    if (walls.size() != static_cast<std::size_t>(width * height)) throw ConfigError("wall mask size");
    if (!is_free(start)) throw ConfigError("maze start must be an in-bounds free cell");
    if (!is_free(goal)) throw ConfigError("maze goal must be an in-bounds free cell");
  }
};

// Layout text: '#' wall, '.' free, 'S' start, 'G' goal, one row per line.
inline GridMaze parse_maze(std::string_view text) {
  GridMaze maze;
  std::vector<std::string_view> rows;
  for (auto line : split(text, '\n')) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    if (!line.empty()) rows.push_back(line);
  }
  if (rows.empty()) throw ParseError(1, "empty maze layout");
  maze.height = static_cast<int>(rows.size());
  maze.width = static_cast<int>(rows.front().size());
  bool has_start = false, has_goal = false;
  for (int y = 0; y < maze.height; ++y) {
    const auto row = rows[static_cast<std::size_t>(y)];
    if (static_cast<int>(row.size()) != maze.width)
      throw ParseError(static_cast<std::size_t>(y + 1), "ragged maze row");
    for (int x = 0; x < maze.width; ++x) {
      const char c = row[static_cast<std::size_t>(x)];
      switch (c) {
        case '#': maze.walls.push_back(1); break;
        case '.': maze.walls.push_back(0); break;
        case 'S':
          if (has_start) throw ParseError(static_cast<std::size_t>(y + 1), "second start cell");
          maze.walls.push_back(0);
          maze.start = {x, y};
          has_start = true;
          break;
        case 'G':
          if (has_goal) throw ParseError(static_cast<std::size_t>(y + 1), "second goal cell");
          maze.walls.push_back(0);
          maze.goal = {x, y};
          has_goal = true;
          break;
        default:
          throw ParseError(static_cast<std::size_t>(y + 1), std::string("unknown maze character '") + c + "'");
      }
    }
  }
  if (!has_start || !has_goal) throw ParseError(rows.size(), "maze needs one 'S' and one 'G'");
  maze.validate();
  return maze;
}

inline constexpr std::string_view kGridMaze10Layout =
    "S...#.....\n"
    ".##.#.###.\n"
    ".#..#...#.\n"
    ".#.###.#..\n"
    ".#.....#.#\n"
    ".####.##..\n"
    "......#..#\n"
    ".#.##.#.#.\n"
    ".#..#...#.\n"
    "...#..#..G\n";

// Breadth-first distance to the goal per cell (row-major), -1 if unreachable or wall.
inline std::vector<int> maze_distances(const GridMaze& maze) {
  std::vector<int> dist(static_cast<std::size_t>(maze.width * maze.height), -1);
  std::deque<Cell> frontier{maze.goal};
  dist[static_cast<std::size_t>(maze.goal.y * maze.width + maze.goal.x)] = 0;
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop_front();
    const int d = dist[static_cast<std::size_t>(c.y * maze.width + c.x)];
    for (const Cell& delta : kMoveDelta) {
      const Cell n{c.x + delta.x, c.y + delta.y};
      if (!maze.is_free(n)) continue;
      auto& dn = dist[static_cast<std::size_t>(n.y * maze.width + n.x)];
      if (dn < 0) {
        dn = d + 1;
        frontier.push_back(n);
      }
    }
  }
  return dist;
}

struct MazeModel {
  TabularMdp mdp;
  std::vector<Cell> cells;         // state -> cell
  std::vector<int> state_of_cell;  // row-major cell -> state, -1 for walls
  int start_state = 0;
  int goal_state = 0;
  bool goal_reachable = true;
  std::vector<std::string> warnings;
  int width = 0;

  int state(Cell c) const { return state_of_cell[static_cast<std::size_t>(c.y * width + c.x)]; }
};

// Free cells become states; 4-connected deterministic moves; goal absorbing.
inline MazeModel to_tabular(const GridMaze& maze, double gamma = 0.99) {
  maze.validate();
  MazeModel model;
  model.width = maze.width;
  model.state_of_cell.assign(static_cast<std::size_t>(maze.width * maze.height), -1);
  for (int y = 0; y < maze.height; ++y)
    for (int x = 0; x < maze.width; ++x)
      if (maze.is_free({x, y})) {
        model.state_of_cell[static_cast<std::size_t>(y * maze.width + x)] = static_cast<int>(model.cells.size());
        model.cells.push_back({x, y});
      }
  auto sid = [&](Cell c) { return model.state(c); };
  const int n = static_cast<int>(model.cells.size());
  TabularMdp& mdp = model.mdp;
  mdp.n_states = n;
  mdp.n_actions = kMoveCount;
  mdp.gamma = gamma;
  mdp.transition.assign(kMoveCount, Eigen::MatrixXd::Zero(n, n));
  mdp.reward = Eigen::MatrixXd::Zero(n, kMoveCount);
  model.start_state = sid(maze.start);
  model.goal_state = sid(maze.goal);
  for (int s = 0; s < n; ++s) {
    const Cell c = model.cells[static_cast<std::size_t>(s)];
    for (int a = 0; a < kMoveCount; ++a) {
      if (s == model.goal_state) {
        mdp.transition[static_cast<std::size_t>(a)](s, s) = 1.0;
        mdp.reward(s, a) = maze.goal_reward;
      } else {
        mdp.transition[static_cast<std::size_t>(a)](s, sid(maze.move(c, a))) = 1.0;
        mdp.reward(s, a) = maze.step_reward;
      }
    }
  }
  mdp.initial = Eigen::VectorXd::Zero(n);
  mdp.initial(model.start_state) = 1.0;
  const auto dist = maze_distances(maze);
  if (dist[static_cast<std::size_t>(maze.start.y * maze.width + maze.start.x)] < 0) {
    model.goal_reachable = false;
    model.warnings.push_back("goal is unreachable from the start cell");
  }
  mdp.validate();
  return model;
}

// ---------------------------------------------------------------------------
// Continuous-action interface shared by both environments

struct EnvState {
  std::vector<double> obs;
  int t = 0;
};

struct StepResult {
  EnvState next;
  double reward = 0.0;
  bool terminal = false;   // absorbing state reached
  bool truncated = false;  // horizon reached
  bool done() const { return terminal || truncated; }
};

inline void check_action(std::span<const double> action, int dim, double bound) {
  if (static_cast<int>(action.size()) != dim) throw DomainError("action has the wrong dimension");
  for (double v : action)
    if (!std::isfinite(v) || std::abs(v) > bound * (1.0 + 1e-9)) throw DomainError("action outside the action box");
}

// The maze seen through a continuous 2-D action: the move whose unit vector
// has the largest dot product with the action is executed.
class GridMazeEnv {
 public:
  explicit GridMazeEnv(GridMaze maze, int horizon = 100, double gamma = 0.99)
      : maze_(std::move(maze)), model_(to_tabular(maze_, gamma)), dist_(maze_distances(maze_)), horizon_(horizon) {
    if (horizon_ <= 0) throw ConfigError("horizon must be positive");
  }

  int state_dim() const { return 2; }
  int action_dim() const { return 2; }
  double action_bound() const { return 1.0; }
  int horizon() const { return horizon_; }
  double gamma() const { return model_.mdp.gamma; }
  const GridMaze& maze() const { return maze_; }
  const MazeModel& model() const { return model_; }

  std::vector<double> observe(Cell c) const {
    return {(c.x + 0.5) / maze_.width, (c.y + 0.5) / maze_.height};
  }

  Cell cell_of(std::span<const double> obs) const {
    if (obs.size() != 2 || !std::isfinite(obs[0]) || !std::isfinite(obs[1]))
      throw DomainError("maze observation must be a finite 2-vector");
    const double fx = obs[0] * maze_.width - 0.5;
    const double fy = obs[1] * maze_.height - 0.5;
    const Cell c{static_cast<int>(std::lround(fx)), static_cast<int>(std::lround(fy))};
    if (std::abs(fx - c.x) > 1e-6 || std::abs(fy - c.y) > 1e-6 || !maze_.is_free(c))
      throw DomainError("observation is not a free maze cell");
    return c;
  }

  int state_index(std::span<const double> obs) const {
    const Cell c = cell_of(obs);
    return model_.state_of_cell[static_cast<std::size_t>(c.y * maze_.width + c.x)];
  }

  static int decode_move(std::span<const double> action) {
    check_action(action, 2, 1.0);
    const std::array<double, kMoveCount> score{-action[1], action[0], action[1], -action[0]};
    return static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
  }

  static std::vector<double> move_vector(int m) {
    const Cell d = kMoveDelta[static_cast<std::size_t>(m)];
    return {static_cast<double>(d.x), static_cast<double>(d.y)};
  }

  EnvState reset(Rng&) const { return {observe(maze_.start), 0}; }

  StepResult step(const EnvState& state, std::span<const double> action, Rng&) const {
    const int m = decode_move(action);
    const Cell c = cell_of(state.obs);
    StepResult r;
    r.next.t = state.t + 1;
    if (c == maze_.goal) {
      r.next.obs = state.obs;
      r.reward = maze_.goal_reward;
      r.terminal = true;
    } else {
      const Cell n = maze_.move(c, m);
      r.next.obs = observe(n);
      r.reward = maze_.step_reward;
      r.terminal = (n == maze_.goal);
    }
    r.truncated = !r.terminal && r.next.t >= horizon_;
    return r;
  }

  // Shortest-path move; ties go to the lowest move index.
  int expert_move(Cell c) const {
    int best = 0;
    int best_d = -1;
    for (int m = 0; m < kMoveCount; ++m) {
      const Cell n = maze_.move(c, m);
      const int d = dist_[static_cast<std::size_t>(n.y * maze_.width + n.x)];
      if (d >= 0 && (best_d < 0 || d < best_d)) {
        best = m;
        best_d = d;
      }
    }
    return best;
  }

  std::vector<double> expert_action(const EnvState& s) const { return move_vector(expert_move(cell_of(s.obs))); }

  std::vector<double> random_action(Rng& rng) const { return move_vector(static_cast<int>(rng.index(kMoveCount))); }

  // BFS distance from the cell under `obs` to the goal.
  int goal_distance(std::span<const double> obs) const {
    const Cell c = cell_of(obs);
    return dist_[static_cast<std::size_t>(c.y * maze_.width + c.x)];
  }

 private:
  GridMaze maze_;
  MazeModel model_;
  std::vector<int> dist_;
  int horizon_;
};

// ---------------------------------------------------------------------------
// Point mass

struct PointMassConfig {
  double arena = 1.0;  // positions clipped to [-arena, arena]^2
  double max_action = 0.1;
  std::array<double, 2> start{-0.7, -0.7};
  std::array<double, 2> goal{0.5, 0.5};
  double start_jitter = 0.1;  // reset draws start + U(-jitter, jitter)^2
  int horizon = 60;
  double gamma = 0.99;
};

class PointMassEnv {
 public:
  explicit PointMassEnv(PointMassConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.horizon <= 0 || cfg_.max_action <= 0.0 || cfg_.arena <= 0.0) throw ConfigError("bad point-mass config");
  }

  int state_dim() const { return 2; }
  int action_dim() const { return 2; }
  double action_bound() const { return cfg_.max_action; }
  int horizon() const { return cfg_.horizon; }
  double gamma() const { return cfg_.gamma; }
  const PointMassConfig& config() const { return cfg_; }

  void check_state(std::span<const double> obs) const {
    if (obs.size() != 2) throw DomainError("point-mass state must be a 2-vector");
    for (double v : obs)
      if (!std::isfinite(v) || std::abs(v) > cfg_.arena + 1e-12) throw DomainError("point-mass state outside the arena");
  }

  double reward_at(std::span<const double> pos) const {
    return -std::hypot(pos[0] - cfg_.goal[0], pos[1] - cfg_.goal[1]);
  }

  EnvState reset(Rng& rng) const {
    EnvState s;
    for (int i = 0; i < 2; ++i) {
      const double v = cfg_.start[static_cast<std::size_t>(i)] + rng.uniform(-cfg_.start_jitter, cfg_.start_jitter);
      s.obs.push_back(std::clamp(v, -cfg_.arena, cfg_.arena));
    }
    return s;
  }

  StepResult step(const EnvState& state, std::span<const double> action, Rng&) const {
    check_state(state.obs);
    check_action(action, 2, cfg_.max_action);
    StepResult r;
    r.next.t = state.t + 1;
    r.next.obs = {std::clamp(state.obs[0] + action[0], -cfg_.arena, cfg_.arena),
                  std::clamp(state.obs[1] + action[1], -cfg_.arena, cfg_.arena)};
    r.reward = reward_at(r.next.obs);
    r.truncated = r.next.t >= cfg_.horizon;
    return r;
  }

  // Per-axis clipped proportional controller. Each axis moves independently
  // within the box, so this greedy step minimizes every future distance.
  std::vector<double> expert_action(const EnvState& s) const {
    return {std::clamp(cfg_.goal[0] - s.obs[0], -cfg_.max_action, cfg_.max_action),
            std::clamp(cfg_.goal[1] - s.obs[1], -cfg_.max_action, cfg_.max_action)};
  }

  std::vector<double> random_action(Rng& rng) const {
    return {rng.uniform(-cfg_.max_action, cfg_.max_action), rng.uniform(-cfg_.max_action, cfg_.max_action)};
  }

 private:
  PointMassConfig cfg_;
};

// ---------------------------------------------------------------------------

class Env {
  template <typename F>
  decltype(auto) visit(F&& f) const {
    return std::visit(std::forward<F>(f), impl_);
  }

 public:
  Env(std::string name, GridMazeEnv e) : name_(std::move(name)), impl_(std::move(e)) {}
  Env(std::string name, PointMassEnv e) : name_(std::move(name)), impl_(std::move(e)) {}

  const std::string& name() const { return name_; }
  int state_dim() const { return visit([](const auto& e) { return e.state_dim(); }); }
  int action_dim() const { return visit([](const auto& e) { return e.action_dim(); }); }
  double action_bound() const { return visit([](const auto& e) { return e.action_bound(); }); }
  int horizon() const { return visit([](const auto& e) { return e.horizon(); }); }
  double gamma() const { return visit([](const auto& e) { return e.gamma(); }); }

  EnvState reset(Rng& rng) const { return visit([&](const auto& e) { return e.reset(rng); }); }
  StepResult step(const EnvState& s, std::span<const double> a, Rng& rng) const {
    return visit([&](const auto& e) { return e.step(s, a, rng); });
  }
  std::vector<double> expert_action(const EnvState& s) const {
    return visit([&](const auto& e) { return e.expert_action(s); });
  }
  std::vector<double> random_action(Rng& rng) const {
    return visit([&](const auto& e) { return e.random_action(rng); });
  }

  const GridMazeEnv* grid() const { return std::get_if<GridMazeEnv>(&impl_); }
  const PointMassEnv* point_mass() const { return std::get_if<PointMassEnv>(&impl_); }
  bool is_tabular() const { return grid() != nullptr; }

 private:
  std::string name_;
  std::variant<GridMazeEnv, PointMassEnv> impl_;
};

// "gridmaze-10", "pointmass", or "gridmaze:<layout file>".
inline Env make_env(std::string_view name) {
  if (name == "gridmaze-10") return Env(std::string(name), GridMazeEnv(parse_maze(kGridMaze10Layout)));
  if (name == "pointmass") return Env(std::string(name), PointMassEnv());
  if (name.rfind("gridmaze:", 0) == 0) {
    const std::string path(name.substr(9));
    return Env(std::string(name), GridMazeEnv(parse_maze(read_file(path))));
  }
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

// Undiscounted return of one episode.
template <typename Policy>
double run_episode(const Env& env, EnvState state, Policy&& policy, Rng& rng) {
  double total = 0.0;
  while (true) {
    const std::vector<double> a = policy(state);
    StepResult r = env.step(state, a, rng);
    total += r.reward;
    if (r.done()) break;
    state = std::move(r.next);
  }
  return total;
}

}  // namespace oap
