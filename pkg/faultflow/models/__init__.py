"""Pydantic schemas for configs, reports and artifact files"""
