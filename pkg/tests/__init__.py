"""
Test suite for the ERPF-MPC planner and simulator.
"""
