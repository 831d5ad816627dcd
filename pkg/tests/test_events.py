import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from improvnet.corpus import Corpus
from improvnet.events import (
    DEFAULT_AUGMENT_OFFSETS, Event, EventError, TimedNote, event_to_vector, events_to_matrix,
    group_notes_to_events, transpose_augment, vector_to_event,
)


def N(onset, pitch, vel=64, dur=100.0):
    return TimedNote(float(onset), pitch, vel, float(dur))


class TestEventValidation:
    def test_slots_padded_with_fill(self):
        e = Event((60, 64), 80, 100.0, 200.0)
        assert e.slots() == (60, 64) + (-1,) * 8
        assert e.is_chord

    @pytest.mark.parametrize("kwargs,msg", [
        (dict(pitches=()), "no sounded pitch"),
        (dict(pitches=tuple(range(11))), "at most 10"),
        (dict(pitches=(64, 60)), "ascending"),
        (dict(pitches=(60, 60)), "ascending"),
        (dict(pitches=(121,)), "pitch outside"),
        (dict(velocity=128), "velocity"),
        (dict(duration_ms=-1.0), "duration_ms"),
        (dict(ioi_ms=20001.0), "ioi_ms"),
        (dict(ioi_ms=float("nan")), "ioi_ms"),
    ])
    def test_invalid_events_name_the_rule(self, kwargs, msg):
        base = dict(pitches=(60,), velocity=64, duration_ms=10.0, ioi_ms=10.0)
        base.update(kwargs)
        with pytest.raises(EventError, match=msg):
            Event(**base)

    def test_timed_note_duration_clamped(self):
        assert N(0, 60, dur=25000).duration_ms == 20000.0


class TestGrouping:
    def test_hand_worked_example(self):
        # anchor at 0 absorbs 20 and 35 but not 36; 36 anchors its own group
        notes = [N(0, 60, 60, 500), N(20, 64, 71, 300), N(35, 67, 80, 400), N(36, 72, 50, 90),
                 N(500, 48, 90, 250)]
        res = group_notes_to_events(notes)
        assert [e.pitches for e in res.events] == [(60, 64, 67), (72,), (48,)]
        # mean of 60, 71, 80 = 70.33 -> 70
        assert res.events[0].velocity == 70
        assert res.events[0].duration_ms == 500.0
        assert [e.ioi_ms for e in res.events] == [36.0, 464.0, 250.0]
        assert res.sizes == [3, 1, 1]

    def test_anchor_not_chained(self):
        notes = [N(0, 60), N(30, 62), N(60, 64)]
        res = group_notes_to_events(notes)
        assert [e.pitches for e in res.events] == [(60, 62), (64,)]

    def test_velocity_rounds_half_away_from_zero(self):
        res = group_notes_to_events([N(0, 60, 64), N(5, 62, 65)])
        assert res.events[0].velocity == 65

    def test_duration_from_earliest_note_lowest_pitch_on_tie(self):
        res = group_notes_to_events([N(0, 60, dur=111), N(0, 55, dur=222), N(10, 50, dur=333)])
        assert res.events[0].duration_ms == 222.0
        assert res.events[0].pitches == (50, 55, 60)

    def test_more_than_ten_keeps_lowest_and_tallies(self):
        notes = [N(i, 40 + i) for i in range(13)]
        res = group_notes_to_events(notes)
        assert res.events[0].pitches == tuple(range(40, 50))
        assert res.discarded == 3

    def test_duplicate_pitches_collapse(self):
        res = group_notes_to_events([N(0, 60), N(3, 60), N(4, 61)])
        assert res.events[0].pitches == (60, 61)

    def test_unsorted_raises(self):
        with pytest.raises(ValueError):
            group_notes_to_events([N(10, 60), N(0, 62)])

    def test_empty(self):
        assert group_notes_to_events([]).events == []

    def test_ioi_clamped(self):
        res = group_notes_to_events([N(0, 60), N(30000, 62)])
        assert res.events[0].ioi_ms == 20000.0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5000), st.integers(0, 120), st.integers(1, 127),
                              st.integers(0, 3000)), min_size=1, max_size=60))
    def test_every_source_pitch_accounted_for(self, raw):
        notes = sorted((N(o, p, v, d) for o, p, v, d in raw), key=lambda n: (n.onset_ms, n.pitch))
        res = group_notes_to_events(notes)
        assert sum(res.sizes) == len(notes)
        for e in res.events:
            assert 1 <= len(e.pitches) <= 10
            assert list(e.pitches) == sorted(set(e.pitches))
        # iois (unclamped here) span from the first anchor to the last anchor,
        # which lies within the threshold of the final onset
        last_anchor = notes[0].onset_ms + sum(e.ioi_ms for e in res.events[:-1])
        assert notes[-1].onset_ms - 35 <= last_anchor <= notes[-1].onset_ms
        assert any(n.onset_ms == last_anchor for n in notes)


events_st = st.builds(
    lambda ps, v, d, i: Event(tuple(sorted(ps)), v, float(d), float(i)),
    st.sets(st.integers(0, 120), min_size=1, max_size=10),
    st.integers(0, 127), st.integers(0, 20000), st.integers(0, 20000))


class TestVectors:
    def test_vector_layout(self):
        v = event_to_vector(Event((60, 67), 90, 120.0, 300.0))
        assert v.tolist() == [60, 67] + [-1] * 8 + [90, 120.0, 300.0]

    @given(events_st)
    def test_vector_round_trip(self, e):
        assert vector_to_event(event_to_vector(e)) == e

    def test_decode_rounds_and_sorts(self):
        v = [64.4, 59.6, -0.7, -1, -1, -1, -1, -1, -1, -1, 80.5, 10.0, 20.0]
        e = vector_to_event(v)
        assert e.pitches == (60, 64)
        assert e.velocity == 81

    def test_decode_errors(self):
        with pytest.raises(EventError, match="no sounded pitch"):
            vector_to_event([-1] * 10 + [60, 1, 1])
        with pytest.raises(EventError, match="non-finite"):
            vector_to_event([60] + [-1] * 9 + [60, np.inf, 1])

    def test_matrix_shape(self):
        assert events_to_matrix([]).shape == (0, 13)


class TestAugment:
    def test_offsets_and_bounds(self):
        c = Corpus([Event((0,), 1, 1.0, 1.0), Event((60,), 1, 1.0, 1.0), Event((118,), 1, 1.0, 1.0)],
                   [0, 2])
        aug = transpose_augment(c, [-1, 3])
        # -1 drops pitch 0; +3 drops 118
        assert [e.pitches for e in aug.events] == [(59,), (117,), (3,), (63,)]
        assert aug.piece_bounds == [0, 1, 2]

    def test_default_offsets_exclude_identity(self):
        assert 0 not in DEFAULT_AUGMENT_OFFSETS
        assert len(DEFAULT_AUGMENT_OFFSETS) == 11
