import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionFlow, buildResponse } from "../src/session.js";
import type { QueryCore } from "../src/types.js";
import {
  associateQuery,
  makeFakeService,
  refineQuery,
  validateQuery,
} from "./helpers/fakeService.js";

const noWait = () => Promise.resolve();

const apiFor = (fake: ReturnType<typeof makeFakeService>) =>
  new ApiClient("http://fake", { fetchImpl: fake.fetchImpl, sleep: noWait });

describe("buildResponse", () => {
  const validate = validateQuery("v-1").query;
  const refine = refineQuery("r-1").query;
  const associate = associateQuery("a-1", [12, 34]).query;

  it("pairs intents with the query kinds that can take them", () => {
    expect(buildResponse(validate, { type: "accept" })?.action).toBe("accept");
    expect(buildResponse(validate, { type: "reject" })?.action).toBe("reject");
    expect(buildResponse(refine, { type: "reject" })?.action).toBe("reject");
    expect(buildResponse(refine, { type: "box", box: [1, 2, 3, 4] })).toMatchObject({
      action: "box",
      box: [1, 2, 3, 4],
    });
    expect(buildResponse(associate, { type: "none" })?.action).toBe("none");
    expect(buildResponse(associate, { type: "choose", clusterId: 34 })).toMatchObject({
      action: "choose",
      choice: 34,
    });
  });

  it("resolves positional choices against the served candidate order", () => {
    expect(buildResponse(associate, { type: "choose-index", index: 1 })).toMatchObject({
      action: "choose",
      choice: 34,
    });
    expect(buildResponse(associate, { type: "choose-index", index: 2 })).toBeNull();
  });

  it("refuses intents that do not fit the query", () => {
    expect(buildResponse(validate, { type: "none" })).toBeNull();
    expect(buildResponse(validate, { type: "box", box: [1, 2, 3, 4] })).toBeNull();
    expect(buildResponse(refine, { type: "accept" })).toBeNull();
    expect(buildResponse(associate, { type: "accept" })).toBeNull();
    expect(buildResponse(associate, { type: "choose", clusterId: 999 })).toBeNull();
  });

  it("always echoes the served query_id", () => {
    const queries: QueryCore[] = [validate, refine, associate];
    for (const q of queries) {
      const body = buildResponse(q, q.kind === "associate" ? { type: "none" } : { type: "reject" });
      expect(body?.query_id).toBe(q.query_id);
    }
  });
});

describe("SessionFlow", () => {
  it("walks a session to completion, tracking the server's budget", async () => {
    const fake = makeFakeService({
      queries: [validateQuery("q-1"), refineQuery("q-2"), associateQuery("q-3", [7])],
      budgetTotal: 10,
    });
    const flow = await SessionFlow.open(apiFor(fake), { w: 1 }, "fake");
    expect(flow.complete).toBe(false);

    let item = await flow.refill();
    expect(item?.query.query_id).toBe("q-1");
    let outcome = await flow.submit({ type: "accept" });
    expect(outcome.ok).toBe(true);
    expect(flow.budget.spent_total).toBe(1);

    item = await flow.refill();
    expect(item?.query.query_id).toBe("q-2");
    outcome = await flow.submit({ type: "box", box: [10, 20, 30, 40] });
    expect(outcome.ok).toBe(true);
    expect(flow.budget.spent_total).toBe(3); // refines cost two clicks

    item = await flow.refill();
    expect(item?.query.query_id).toBe("q-3");
    outcome = await flow.submit({ type: "choose-index", index: 0 });
    expect(outcome.ok).toBe(true);
    expect(flow.complete).toBe(true);
    expect(await flow.refill()).toBeNull();
    expect(fake.state.answered.get("q-3")).toMatchObject({ action: "choose", choice: 7 });
  });

  it("reports inapplicable intents without touching the wire", async () => {
    const fake = makeFakeService({ queries: [validateQuery("q-1")] });
    const flow = await SessionFlow.open(apiFor(fake), {}, "fake");
    await flow.refill();
    const logBefore = fake.log.length;
    const outcome = await flow.submit({ type: "none" });
    expect(outcome).toEqual({ ok: false, reason: "not-applicable" });
    expect(fake.log.length).toBe(logBefore);
  });

  it("keeps a conflicted query on deck and surfaces the message verbatim", async () => {
    const message = "edge (3, 17) at level 2 is already clamped on by response r-9";
    const fake = makeFakeService({
      queries: [validateQuery("q-c")],
      conflicts: { "q-c": message },
    });
    const flow = await SessionFlow.open(apiFor(fake), {}, "fake");
    await flow.refill();
    const outcome = await flow.submit({ type: "accept" });
    expect(outcome).toEqual({
      ok: false,
      reason: "conflict",
      notice: { queryId: "q-c", code: "conflicting-clamp", message },
    });
    expect(flow.conflict?.message).toBe(message);
    expect(flow.current()?.query.query_id).toBe("q-c"); // still answerable
    expect(flow.budget.spent_total).toBe(0); // nothing charged

    const retry = await flow.submit({ type: "reject" });
    expect(retry.ok).toBe(true);
    expect(flow.conflict).toBeNull();
  });

  it("drops a stale query and moves on", async () => {
    const fake = makeFakeService({ queries: [validateQuery("q-1"), validateQuery("q-2")] });
    const flow = await SessionFlow.open(apiFor(fake), {}, "fake");
    await flow.refill();
    fake.state.open.delete("q-1"); // resolved behind our back
    const outcome = await flow.submit({ type: "accept" });
    expect(outcome).toMatchObject({ ok: false, reason: "stale" });
    expect(flow.notice).toContain("q-1");
    const next = await flow.refill(); // the server re-serves what is still open
    expect(next?.query.query_id).toBe("q-2");
  });

  it("skips without spending clicks", async () => {
    const fake = makeFakeService({ queries: [validateQuery("q-1"), validateQuery("q-2")] });
    const flow = await SessionFlow.open(apiFor(fake), {}, "fake");
    await flow.refill();
    await flow.submit({ type: "skip" });
    expect(fake.state.skipped.has("q-1")).toBe(true);
    expect(flow.budget.spent_total).toBe(0);
    const next = await flow.refill();
    expect(next?.query.query_id).toBe("q-2");
  });

  it("attach rebuilds everything the machine knows from the service", async () => {
    const fake = makeFakeService({
      queries: [validateQuery("q-1"), validateQuery("q-2")],
      budgetTotal: 8,
    });
    const api = apiFor(fake);
    const first = await SessionFlow.open(api, {}, "fake");
    await first.refill();
    await first.submit({ type: "accept" });

    // refresh: a brand-new machine, no state carried over
    const second = await SessionFlow.attach(api, "fake");
    expect(second.budget.spent_total).toBe(1);
    expect(second.complete).toBe(false);
    const item = await second.refill();
    expect(item?.query.query_id).toBe("q-2");
    const outcome = await second.submit({ type: "reject" });
    expect(outcome.ok).toBe(true);
    expect(second.complete).toBe(true);
  });

  it("open falls back to attach when a retried create already landed", async () => {
    const fake = makeFakeService({ queries: [validateQuery("q-1")] });
    const api = apiFor(fake);
    await SessionFlow.open(api, {}, "fake");
    const again = await SessionFlow.open(api, {}, "fake"); // duplicate create -> 409 -> attach
    expect(again.sessionId).toBe("fake");
    expect(again.complete).toBe(false);
  });

  it("honors the batch size when refilling", async () => {
    const fake = makeFakeService({
      queries: [validateQuery("q-1"), validateQuery("q-2"), validateQuery("q-3")],
    });
    const flow = await SessionFlow.open(apiFor(fake), {}, "fake", { batchSize: 2 });
    await flow.refill();
    expect(flow.queue).toHaveLength(2);
    expect(fake.log.at(-1)).toBe("GET /sessions/fake/queries?limit=2");
  });
});
