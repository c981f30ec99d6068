"""Event-driven simulation of one federated training run.

One Simulation owns the virtual clock, the server model, and the per-client
state machines (idle -> downloading -> training -> uploading -> idle). The
variant toggles decide how uploads turn into server updates:

  per_arrival   every upload updates the model immediately
  synchronous   a barrier waits for all clients, then one round fires
  otherwise     timed aggregation ticks fire at a fixed cadence

Everything is driven by derived seeds, so a run is a pure function of its
configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregation import (ClientRecord, ServerBuffer, fed_avg, mask_fed_avg,
                          staleness_weights, update_buffer)
from .config import RunConfig, make_lr_schedule
from .datagen import PartitionSpec, generate_dataset, partition
from .distribution import (HEADER_BYTES, ENTRY_BYTES, DeltaPacket, IndexRange,
                           build_submodels, client_download_bytes,
                           encode_deltas, index_for, reconstruct)
from .errors import InvariantError
from .model import (Dataset, Mask, ParamVector, TrainSpec, init_model,
                    local_train, mask_of, mlp_shapes, test_acc)
from .network import (Endpoint, EventKind, EventQueue, FairShareNetwork,
                      SimEvent, SimulationComplete, aggregation_tick_times)
from .pruning import (DensityState, EarlyStopper, TimeQueue, compute_density,
                      mean_round_time, prune_to_density, should_terminate)
from .variants import VARIANTS, VariantToggles

# seed derivation roles; data partitioning uses role 4 off the data seed
_ROLE_INIT = 1
_ROLE_NET = 2
_ROLE_TRAIN = 3
_ROLE_PARTITION = 4


def _derived_seed(master: int, role: int, *extra: int) -> int:
    """Stable independent seed for (master, role, extra...)."""
    words = np.random.SeedSequence([int(master), int(role), *map(int, extra)])
    a, b = words.generate_state(2)
    return int(a) | (int(b) << 32)


@dataclass
class PerClientStats:
    density: float
    rounds_completed: int
    staleness_age: int
    bytes_up: int
    bytes_down: int


@dataclass
class RoundReport:
    round: int
    sim_time: float
    global_acc: float
    per_client: list[PerClientStats]


@dataclass
class RunResult:
    reports: list[RoundReport]
    termination: str
    sim_time: float
    rounds: int
    server_tx_bytes: int
    server_rx_bytes: int
    final_acc: float


@dataclass
class _Client:
    cid: int
    data: Dataset
    compute_factor: float
    mask: Mask                       # assignment used at the next dispatch
    dstate: DensityState
    stopper: EarlyStopper
    phase: str = "idle"
    active_mask: Mask | None = None  # assignment of the cycle in flight
    dispatch_round: int = 0
    cycle_start: float = 0.0
    packets: list[DeltaPacket] = field(default_factory=list)
    packet_hi: int = 0
    model: ParamVector | None = None
    rounds_completed: int = 0
    train_count: int = 0
    arrived_once: bool = False
    first_raw_time: float = 0.0
    last_contribution_round: int = -1


class Simulation:
    """One run of one variant under one configuration."""

    def __init__(self, cfg: RunConfig):
        cfg = cfg.resolved()
        self.cfg = cfg
        self.toggles: VariantToggles = VARIANTS[cfg.variant]
        self.shapes = mlp_shapes([cfg.model.features, *cfg.model.hidden,
                                  cfg.model.classes])
        self.W = init_model(self.shapes, _derived_seed(cfg.seed, _ROLE_INIT))
        self.n_params = len(self.W)
        self.tspec = TrainSpec(make_lr_schedule(cfg.train.lr_schedule),
                               cfg.train.batch_size, cfg.train.local_iterations)

        d = cfg.data
        total = cfg.clients * d.samples_per_client + d.test_samples
        full = generate_dataset(cfg.model.classes, cfg.model.features, total,
                                d.seed, separation=d.separation,
                                modes_per_class=d.modes_per_class, noise=d.noise)
        self.test = full.subset(np.arange(d.test_samples))
        pool = full.subset(np.arange(d.test_samples, total))
        shards = partition(pool, cfg.clients,
                           PartitionSpec(d.partition, d.skew_alpha,
                                         _derived_seed(d.seed, _ROLE_PARTITION)))

        self.queue = EventQueue()
        server = Endpoint(cfg.network.server_upload, cfg.network.server_download,
                          cfg.network.server_sigma)
        endpoints = {i: Endpoint(cfg.network.client_upload[i],
                                 cfg.network.client_download[i],
                                 cfg.network.client_sigma)
                     for i in range(cfg.clients)}
        self.net = FairShareNetwork(
            self.queue, server, endpoints,
            np.random.default_rng(_derived_seed(cfg.seed, _ROLE_NET)))

        dn = cfg.density
        self.clients = [
            _Client(cid=i, data=shards[i],
                    compute_factor=cfg.compute.client_factors[i],
                    mask=Mask.ones(self.n_params),
                    dstate=DensityState(rho=1.0, rho_min=dn.rho_min[i],
                                        delta_rho=dn.delta_rho,
                                        queue=TimeQueue(dn.pruning_interval)),
                    stopper=EarlyStopper(dn.patience, dn.min_delta))
            for i in range(cfg.clients)]
        self.global_stopper = EarlyStopper(dn.global_patience, dn.min_delta)

        self.buffer = ServerBuffer()          # persistent, for buffered variants
        self._pending: dict[int, ClientRecord] = {}
        self.round = 0
        self.reports: list[RoundReport] = []
        self.server_tx_bytes = 0
        self._ticks = None                    # tick time generator, set after warmup
        self._done_reason: str | None = None
        self.end_time = 0.0

    # ------------------------------------------------------------------ loop

    def run(self) -> RunResult:
        self._dispatch_idle(0)
        t_max = self.cfg.schedule.t_max
        while self._done_reason is None:
            try:
                ev = self.queue.advance()
            except SimulationComplete:
                self._finish("drained")
                break
            if t_max is not None and ev.time > t_max:
                self._finish("t_max")
                self.end_time = t_max
                break
            if ev.kind == EventKind.TRANSFER_DONE:
                self._on_transfer(ev)
            elif ev.kind == EventKind.TRAIN_DONE:
                self._on_train(ev)
            else:
                self._on_tick(ev)
        if not self.reports:
            self._emit_report(max(0, self.round - 1))
        rx = sum(self.net.bytes_up.values())
        return RunResult(reports=self.reports, termination=self._done_reason,
                         sim_time=self.end_time, rounds=self.round,
                         server_tx_bytes=self.server_tx_bytes,
                         server_rx_bytes=rx,
                         final_acc=self.reports[-1].global_acc)

    def _finish(self, reason: str) -> None:
        if self._done_reason is None:
            self._done_reason = reason
            self.end_time = self.queue.now

    # ---------------------------------------------------------- client cycle

    def _train_time(self, c: _Client) -> float:
        share = c.active_mask.popcount / self.n_params
        return (self.tspec.local_iterations * self.cfg.compute.per_iteration_cost
                * share * c.compute_factor)

    def _on_transfer(self, ev: SimEvent) -> None:
        flow = self.net.complete(ev)
        if flow is None:
            return                     # superseded by a reshare
        c = self.clients[flow.client]
        if flow.direction == "down":
            c.model = reconstruct(c.packets, IndexRange(1, c.packet_hi),
                                  self.shapes)
            c.phase = "training"
            self.queue.push(SimEvent(time=self.queue.now + self._train_time(c),
                                     kind=EventKind.TRAIN_DONE, client=c.cid))
        else:
            c.phase = "idle"
            self._on_arrival(c)

    def _on_train(self, ev: SimEvent) -> None:
        c = self.clients[ev.client]
        seed = _derived_seed(self.cfg.seed, _ROLE_TRAIN, c.cid, c.train_count)
        c.train_count += 1
        c.model = local_train(c.model, c.active_mask, c.data, self.tspec,
                              round_index=c.dispatch_round, seed=seed)
        c.phase = "uploading"
        payload = HEADER_BYTES + ENTRY_BYTES * c.active_mask.popcount
        self.net.start("up", c.cid, payload)

    def _on_arrival(self, c: _Client) -> None:
        now = self.queue.now
        c.rounds_completed += 1
        raw = now - c.cycle_start
        if not c.arrived_once:
            c.arrived_once = True
            c.first_raw_time = raw
        # round times are logged per full-model-equivalent: a client running a
        # 40% submodel reports its measured time divided by 0.4. The density
        # controller then sees a load-independent per-client cost, so assigned
        # densities settle instead of oscillating.
        norm = raw / c.active_mask.density
        if not mask_of(c.model).subset_of(c.active_mask):
            raise InvariantError(
                f"client {c.cid} returned weights outside its assigned mask")
        rec = ClientRecord(model=c.model, dispatch_round=c.dispatch_round,
                           arrival_time=now, round_time=norm,
                           queue=c.dstate.queue,
                           density=c.active_mask.density)
        if self.toggles.per_arrival:
            self._aggregate_arrival(c, rec)
        elif self.toggles.synchronous:
            self._pending[c.cid] = rec
            if len(self._pending) == self.cfg.clients:
                self._server_round()
        else:
            self._pending[c.cid] = rec
            self._maybe_start_ticks()
            if not self.toggles.buffered and self._done_reason is None:
                # window-mode clients train continuously; only the buffered
                # protocol holds clients until the tick boundary
                self._dispatch_idle(self.round)

    # ------------------------------------------------------------- tick mode

    def _maybe_start_ticks(self) -> None:
        if self._ticks is not None:
            return
        if not all(c.arrived_once for c in self.clients):
            return
        delta = self.cfg.schedule.delta_t
        if delta is None:
            delta = float(np.median([c.first_raw_time for c in self.clients]))
        self._ticks = aggregation_tick_times(self.queue.now, delta,
                                             self.cfg.schedule.t_merge)
        self.queue.push(SimEvent(time=next(self._ticks), kind=EventKind.AGG_TICK))

    def _on_tick(self, ev: SimEvent) -> None:
        self._server_round()
        if self._done_reason is None:
            self.queue.push(SimEvent(time=next(self._ticks),
                                     kind=EventKind.AGG_TICK))

    # ------------------------------------------------------- round machinery

    def _server_round(self) -> None:
        """One aggregation round: drain arrivals, update the model, run the
        periodic density/convergence work, report, dispatch."""
        cfg = self.cfg
        n = self.round
        buf = self.buffer if self.toggles.buffered else ServerBuffer()
        buf.round = n
        for cid in sorted(self._pending):
            update_buffer(buf, cid, self._pending[cid])
            self.clients[cid].last_contribution_round = \
                self._pending[cid].dispatch_round
        self._pending = {}

        if len(buf):
            wts = staleness_weights(buf, cfg.aggregation.beta)
            if self.toggles.masked_aggregation:
                self.W = mask_fed_avg(buf, self.W, wts, cfg.aggregation.eta_g)
            elif self.toggles.buffered:
                # plain weighted average of the buffer, stepped by eta_g
                avg = fed_avg(buf, wts)
                g = cfg.aggregation.eta_g
                self.W = self.W.like((1.0 - g) * self.W.values + g * avg.values)
            elif self.toggles.synchronous:
                self.W = fed_avg(buf, wts)
            else:
                # fixed-cadence window mix
                avg = fed_avg(buf, wts)
                a = cfg.aggregation.alpha
                self.W = self.W.like((1.0 - a) * self.W.values + a * avg.values)

        if (n + 1) % cfg.density.pruning_interval == 0:
            if self.toggles.pruning and self.toggles.recovery and self.toggles.buffered:
                self._observe_buffered_recovery()
            if self.toggles.pruning:
                self._refresh_densities()
            self._check_convergence()

        budget = cfg.schedule.round_budget
        budget_hit = budget is not None and n + 1 >= budget
        if ((n + 1) % cfg.schedule.report_interval == 0
                or self._done_reason is not None or budget_hit):
            self._emit_report(n)
        if budget_hit and self._done_reason is None:
            self._finish("round_budget")
        self.round = n + 1
        if self._done_reason is None:
            self._dispatch_idle(self.round)

    def _aggregate_arrival(self, c: _Client, rec: ClientRecord) -> None:
        cfg = self.cfg
        v = self.round
        tmp = ServerBuffer(round=v)
        update_buffer(tmp, c.cid, rec)     # invariants + round-time logging
        c.last_contribution_round = rec.dispatch_round
        s = (1.0 + v - rec.dispatch_round) ** (-cfg.aggregation.beta)
        step = cfg.aggregation.alpha * s
        if self.toggles.masked_aggregation:
            on = c.active_mask.bits.astype(bool)
            out = self.W.values.copy()
            out[on] = (1.0 - step) * out[on] + step * rec.model.values[on]
            self.W = self.W.like(out)
        else:
            self.W = self.W.like((1.0 - step) * self.W.values
                                 + step * rec.model.values)
        if self.toggles.pruning and self.toggles.recovery:
            trig = c.stopper.observe(test_acc(rec.model, self.test))
            if trig and c.dstate.rho < 1.0:
                c.dstate.recover()
        self.round = v + 1

        if self.round % cfg.density.pruning_interval == 0:
            if self.toggles.pruning:
                self._refresh_densities()
            self._check_convergence()

        budget = cfg.schedule.round_budget
        budget_hit = budget is not None and self.round >= budget
        if (self.round % (cfg.clients * cfg.schedule.report_interval) == 0
                or self._done_reason is not None or budget_hit):
            self._emit_report(v)
        if budget_hit and self._done_reason is None:
            self._finish("round_budget")
        if self._done_reason is None:
            self._dispatch_idle(self.round)

    # --------------------------------------------------- periodic maintenance

    def _observe_buffered_recovery(self) -> None:
        for cid in self.buffer.client_ids():
            c = self.clients[cid]
            acc = test_acc(self.buffer.records[cid].model, self.test)
            if c.stopper.observe(acc) and c.dstate.rho < 1.0:
                c.dstate.recover()

    def _refresh_densities(self) -> None:
        means = {c.cid: mean_round_time(c.dstate.queue)
                 for c in self.clients if len(c.dstate.queue)}
        for c in self.clients:
            if c.cid in means:
                c.dstate.rho = compute_density(means, c.cid, c.dstate)
            else:
                c.dstate.rho = 1.0       # no history yet: run dense
            c.mask = prune_to_density(self.W, c.dstate.rho,
                                      self.cfg.density.policy)

    def _check_convergence(self) -> None:
        trig = self.global_stopper.observe(test_acc(self.W, self.test))
        if self.toggles.pruning:
            densities = {c.cid: c.dstate.rho for c in self.clients}
        else:
            densities = {c.cid: 1.0 for c in self.clients}
        if should_terminate(densities, trig):
            self._finish("converged")

    # --------------------------------------------------------------- dispatch

    def _dispatch_idle(self, next_round: int) -> None:
        idle = [c for c in self.clients if c.phase == "idle"]
        if not idle:
            return
        dense = Mask.ones(self.n_params)
        masks = {c.cid: (c.mask if self.toggles.pruning else dense)
                 for c in idle}
        sset, order = build_submodels(self.W, masks)
        packets = encode_deltas(sset, round_index=next_round)
        his = {c.cid: index_for(order, c.cid).hi for c in idle}
        for c in idle:
            c.packets = packets
            c.packet_hi = his[c.cid]
            c.active_mask = masks[c.cid]
            c.dispatch_round = next_round
            c.cycle_start = self.queue.now
            c.phase = "downloading"
            self.net.start("down", c.cid,
                           client_download_bytes(packets, his[c.cid]))
        if self.toggles.differential:
            # shared packet stream: the server sends each needed packet once
            self.server_tx_bytes += client_download_bytes(packets,
                                                          max(his.values()))
        else:
            self.server_tx_bytes += sum(
                client_download_bytes(packets, h) for h in his.values())

    # ---------------------------------------------------------------- reports

    def _emit_report(self, n: int) -> None:
        acc = test_acc(self.W, self.test)
        per = []
        for c in self.clients:
            age = (0 if c.last_contribution_round < 0
                   else 1 + n - c.last_contribution_round)
            per.append(PerClientStats(
                density=c.dstate.rho if self.toggles.pruning else 1.0,
                rounds_completed=c.rounds_completed,
                staleness_age=age,
                bytes_up=int(self.net.bytes_up.get(c.cid, 0)),
                bytes_down=int(self.net.bytes_down.get(c.cid, 0))))
        self.reports.append(RoundReport(round=n, sim_time=self.queue.now,
                                        global_acc=acc, per_client=per))


def run_simulation(cfg: RunConfig) -> RunResult:
    return Simulation(cfg).run()
